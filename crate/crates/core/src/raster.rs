//! Single-channel planes, the three-channel split and RGB overlays.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An 8-bit single-channel intensity raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Geometry(format!(
                "plane dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Geometry(format!(
                "{} intensities for a {width}x{height} plane",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Same geometry, every intensity passed through `f`.
    pub fn map(&self, f: impl Fn(u8) -> u8) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// The semantic role of a fluorescence channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// Blue: macrophage nuclei.
    Macrophage,
    /// Green: parasite nuclei.
    Parasite,
    /// Red: all nuclei plus cytoplasm.
    Cytoplasm,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Macrophage, Channel::Parasite, Channel::Cytoplasm];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Macrophage => "macrophage",
            Channel::Parasite => "parasite",
            Channel::Cytoplasm => "cytoplasm",
        }
    }
}

/// The three channel planes of one image. All planes share one geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelSet {
    macrophage: Plane,
    parasite: Plane,
    cytoplasm: Plane,
}

impl ChannelSet {
    pub fn new(macrophage: Plane, parasite: Plane, cytoplasm: Plane) -> Result<Self> {
        let dims = (macrophage.width, macrophage.height);
        for (name, p) in [("parasite", &parasite), ("cytoplasm", &cytoplasm)] {
            if (p.width, p.height) != dims {
                return Err(Error::Geometry(format!(
                    "{name} plane is {}x{}, macrophage plane is {}x{}",
                    p.width, p.height, dims.0, dims.1
                )));
            }
        }
        Ok(Self {
            macrophage,
            parasite,
            cytoplasm,
        })
    }

    /// Split an interleaved RGB buffer: red is cytoplasm, green parasite, blue macrophage.
    pub fn from_rgb(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::Geometry(format!(
                "{} bytes for a {width}x{height} RGB raster",
                rgb.len()
            )));
        }
        let channel = |offset: usize| rgb.iter().skip(offset).step_by(3).copied().collect();
        Self::new(
            Plane::new(width, height, channel(2))?,
            Plane::new(width, height, channel(1))?,
            Plane::new(width, height, channel(0))?,
        )
    }

    pub fn width(&self) -> usize {
        self.macrophage.width
    }

    pub fn height(&self) -> usize {
        self.macrophage.height
    }

    pub fn macrophage(&self) -> &Plane {
        &self.macrophage
    }

    pub fn parasite(&self) -> &Plane {
        &self.parasite
    }

    pub fn cytoplasm(&self) -> &Plane {
        &self.cytoplasm
    }

    pub fn plane(&self, channel: Channel) -> &Plane {
        match channel {
            Channel::Macrophage => &self.macrophage,
            Channel::Parasite => &self.parasite,
            Channel::Cytoplasm => &self.cytoplasm,
        }
    }

    /// Re-merge into RGB (red = cytoplasm, green = parasite, blue = macrophage).
    pub fn to_rgb(&self) -> RgbRaster {
        let n = self.width() * self.height();
        let mut data = Vec::with_capacity(n * 3);
        for i in 0..n {
            data.push(self.cytoplasm.data[i]);
            data.push(self.parasite.data[i]);
            data.push(self.macrophage.data[i]);
        }
        RgbRaster {
            width: self.width(),
            height: self.height(),
            data,
        }
    }
}

/// Interleaved 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbRaster {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, color: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    /// RGBA copy, opaque, for canvas upload.
    pub fn to_rgba(&self) -> Vec<u8> {
        self.data
            .chunks_exact(3)
            .flat_map(|p| [p[0], p[1], p[2], 255])
            .collect()
    }

    #[cfg(feature = "io")]
    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

pub const MACROPHAGE_MARKER: [u8; 3] = [255, 255, 0];
pub const PARASITE_MARKER: [u8; 3] = [255, 0, 255];
pub const SUBCENTROID_MARKER: [u8; 3] = [0, 255, 255];
pub const LINK_COLOR: [u8; 3] = [255, 255, 255];

/// Things to draw on top of the merged channels. Coordinates are pixel indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub macrophages: Vec<(i64, i64)>,
    pub parasites: Vec<(i64, i64)>,
    pub sub_centroids: Vec<(i64, i64)>,
    /// Parasite centroid to macrophage centroid.
    pub links: Vec<((i64, i64), (i64, i64))>,
}

impl Overlay {
    pub fn is_empty(&self) -> bool {
        self.macrophages.is_empty()
            && self.parasites.is_empty()
            && self.sub_centroids.is_empty()
            && self.links.is_empty()
    }
}

/// Integer line rasterization covering both endpoints, all octants.
pub fn bresenham(from: (i64, i64), to: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = from;
    let dx = (to.0 - x).abs();
    let dy = -(to.1 - y).abs();
    let sx = if x < to.0 { 1 } else { -1 };
    let sy = if y < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        out.push((x, y));
        if (x, y) == to {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Merge the channels and draw centroids, sub-centroids and association links.
///
/// Links are drawn first so markers stay visible. Each marker is a plus sign
/// of arm length 1, clipped at the raster edge; the centre pixel always
/// carries the marker color.
pub fn render_overlay(channels: &ChannelSet, overlay: &Overlay) -> Result<RgbRaster> {
    let (w, h) = (channels.width(), channels.height());
    let check = |&(x, y): &(i64, i64)| -> Result<()> {
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
            return Err(Error::Coordinate {
                x,
                y,
                width: w,
                height: h,
            });
        }
        Ok(())
    };
    overlay
        .macrophages
        .iter()
        .chain(&overlay.parasites)
        .chain(&overlay.sub_centroids)
        .chain(overlay.links.iter().flat_map(|(a, b)| [a, b]))
        .try_for_each(check)?;

    let mut out = channels.to_rgb();
    for &(a, b) in &overlay.links {
        for (x, y) in bresenham(a, b) {
            out.put(x as usize, y as usize, LINK_COLOR);
        }
    }
    let groups = [
        (&overlay.sub_centroids, SUBCENTROID_MARKER),
        (&overlay.parasites, PARASITE_MARKER),
        (&overlay.macrophages, MACROPHAGE_MARKER),
    ];
    for (points, color) in groups {
        for &(x, y) in points {
            for (dx, dy) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (px, py) = (x + dx, y + dy);
                if px >= 0 && py >= 0 && (px as usize) < w && (py as usize) < h {
                    out.put(px as usize, py as usize, color);
                }
            }
        }
    }
    // Centre pixels last so a neighbour's arm never hides a centroid.
    for (points, color) in groups {
        for &(x, y) in points {
            out.put(x as usize, y as usize, color);
        }
    }
    Ok(out)
}

/// JSON manifest naming one grayscale file per channel role.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelManifest {
    pub macrophage: std::path::PathBuf,
    pub parasite: std::path::PathBuf,
    pub cytoplasm: std::path::PathBuf,
}

/// A loaded image and whether it came from a lossy encoding.
#[derive(Clone, Debug)]
pub struct LoadedImage {
    pub channels: ChannelSet,
    pub lossy: bool,
}

#[cfg(feature = "io")]
mod io {
    use std::path::{Path, PathBuf};

    use image::{ColorType, DynamicImage, ImageFormat, ImageReader};

    use super::{ChannelManifest, ChannelSet, LoadedImage, Plane};
    use crate::{Error, Result};

    fn format_err(path: &Path, reason: impl ToString) -> Error {
        Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    fn decode(path: &Path) -> Result<(DynamicImage, Option<ImageFormat>)> {
        let reader = ImageReader::open(path)
            .map_err(|e| format_err(path, e))?
            .with_guessed_format()
            .map_err(|e| format_err(path, e))?;
        let format = reader.format();
        let img = reader.decode().map_err(|e| format_err(path, e))?;
        Ok((img, format))
    }

    fn is_gray(c: ColorType) -> bool {
        matches!(
            c,
            ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16
        )
    }

    fn load_gray(path: &Path) -> Result<(Plane, bool)> {
        let (img, format) = decode(path)?;
        if img.color() != ColorType::L8 && img.color() != ColorType::La8 {
            return Err(format_err(
                path,
                format!(
                    "manifest planes must be 8-bit grayscale, found {:?}",
                    img.color()
                ),
            ));
        }
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        let plane = Plane::new(w as usize, h as usize, gray.into_raw())?;
        Ok((plane, format == Some(ImageFormat::Jpeg)))
    }

    /// Load an RGB raster or a channel manifest (`.json`).
    pub fn load_image(path: &Path) -> Result<LoadedImage> {
        let is_manifest = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_manifest {
            return load_manifest(path);
        }
        let (img, format) = decode(path)?;
        if is_gray(img.color()) {
            return Err(Error::ChannelMapping {
                path: path.to_path_buf(),
                reason: "grayscale image has no channels to split; use a channel manifest"
                    .into(),
            });
        }
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let channels = ChannelSet::from_rgb(w as usize, h as usize, rgb.as_raw())?;
        Ok(LoadedImage {
            channels,
            lossy: format == Some(ImageFormat::Jpeg),
        })
    }

    pub fn load_manifest(path: &Path) -> Result<LoadedImage> {
        let text = std::fs::read_to_string(path)?;
        let manifest: ChannelManifest =
            serde_json::from_str(&text).map_err(|e| format_err(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &PathBuf| {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        let (macrophage, l1) = load_gray(&resolve(&manifest.macrophage))?;
        let (parasite, l2) = load_gray(&resolve(&manifest.parasite))?;
        let (cytoplasm, l3) = load_gray(&resolve(&manifest.cytoplasm))?;
        Ok(LoadedImage {
            channels: ChannelSet::new(macrophage, parasite, cytoplasm)?,
            lossy: l1 || l2 || l3,
        })
    }

    pub fn save_plane_png(plane: &Plane, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            plane.data(),
            plane.width() as u32,
            plane.height() as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| format_err(path, e))
    }

    /// Write the three planes as grayscale PNGs plus a manifest referencing them.
    pub fn save_manifest(channels: &ChannelSet, dir: &Path, stem: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let name = |role: &str| PathBuf::from(format!("{stem}_{role}.png"));
        let manifest = ChannelManifest {
            macrophage: name("macrophage"),
            parasite: name("parasite"),
            cytoplasm: name("cytoplasm"),
        };
        save_plane_png(channels.macrophage(), &dir.join(&manifest.macrophage))?;
        save_plane_png(channels.parasite(), &dir.join(&manifest.parasite))?;
        save_plane_png(channels.cytoplasm(), &dir.join(&manifest.cytoplasm))?;
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}

#[cfg(feature = "io")]
pub use io::{load_image, load_manifest, save_manifest, save_plane_png};
