//! Per-region low-level features: area, centroid, bounding box and a
//! chain-code shape descriptor.

use serde::{Deserialize, Serialize};

use crate::segment::{Pixel, Region};

/// Freeman direction vectors in image coordinates (y grows downward).
/// 0 = E, 1 = NE, 2 = N, ... counter-clockwise on screen.
pub const DIRECTIONS: [(i64, i64); 8] = [
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

fn direction_of(v: (i64, i64)) -> u8 {
    DIRECTIONS
        .iter()
        .position(|&d| d == v)
        .expect("unit 8-neighbour step") as u8
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainCode {
    pub start: (u32, u32),
    pub codes: Vec<u8>,
}

impl ChainCode {
    /// Boundary length with diagonal steps weighted by sqrt(2).
    pub fn perimeter(&self) -> f64 {
        self.codes
            .iter()
            .map(|&c| if c % 2 == 0 { 1.0 } else { std::f64::consts::SQRT_2 })
            .sum()
    }

    /// Positions visited by walking the codes from `start`.
    pub fn walk(&self) -> Vec<(i64, i64)> {
        let mut p = (self.start.0 as i64, self.start.1 as i64);
        let mut out = vec![p];
        for &c in &self.codes {
            let (dx, dy) = DIRECTIONS[c as usize];
            p = (p.0 + dx, p.1 + dy);
            out.push(p);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: u32,
    pub min_y: u32,
    pub max_x: u32,
    pub max_y: u32,
}

impl BBox {
    pub fn area(&self) -> u64 {
        (self.max_x - self.min_x + 1) as u64 * (self.max_y - self.min_y + 1) as u64
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x as f64 && x <= self.max_x as f64 && y >= self.min_y as f64 && y <= self.max_y as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    CircularOrElliptical,
    Other,
}

impl Shape {
    /// Scalar encoding used in feature dumps: 1 circular, 0 other.
    pub fn scalar(self) -> u8 {
        match self {
            Shape::CircularOrElliptical => 1,
            Shape::Other => 0,
        }
    }
}

/// Isoperimetric cutoff between the two shape classes.
pub const CIRCULARITY_CUTOFF: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub area: usize,
    pub centroid: (f64, f64),
    pub bbox: BBox,
    pub shape: Shape,
}

/// Mean pixel position with uniform weights.
pub fn centroid(pixels: &[Pixel]) -> (f64, f64) {
    assert!(!pixels.is_empty(), "centroid of an empty region");
    let n = pixels.len() as f64;
    let (sx, sy) = pixels
        .iter()
        .fold((0u64, 0u64), |(a, b), p| (a + p.x as u64, b + p.y as u64));
    (sx as f64 / n, sy as f64 / n)
}

pub fn min_bbox(pixels: &[Pixel]) -> BBox {
    assert!(!pixels.is_empty(), "bounding box of an empty region");
    let mut b = BBox {
        min_x: u32::MAX,
        min_y: u32::MAX,
        max_x: 0,
        max_y: 0,
    };
    for p in pixels {
        b.min_x = b.min_x.min(p.x);
        b.min_y = b.min_y.min(p.y);
        b.max_x = b.max_x.max(p.x);
        b.max_y = b.max_y.max(p.y);
    }
    b
}

/// Moore-neighbour boundary trace, clockwise on screen, starting at the
/// top-most then left-most pixel. Terminates when the walk is back at the
/// start and about to repeat its first move.
pub fn freeman_chain(pixels: &[Pixel]) -> ChainCode {
    assert!(!pixels.is_empty(), "chain code of an empty region");
    let bb = min_bbox(pixels);
    // Local occupancy grid with a one pixel background frame.
    let w = (bb.max_x - bb.min_x + 3) as i64;
    let h = (bb.max_y - bb.min_y + 3) as i64;
    let mut grid = vec![false; (w * h) as usize];
    for p in pixels {
        let (x, y) = ((p.x - bb.min_x + 1) as i64, (p.y - bb.min_y + 1) as i64);
        grid[(y * w + x) as usize] = true;
    }
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && grid[(y * w + x) as usize];

    let start_px = pixels
        .iter()
        .min_by_key(|p| (p.y, p.x))
        .copied()
        .expect("non-empty");
    let start = ((start_px.x - bb.min_x + 1) as i64, (start_px.y - bb.min_y + 1) as i64);

    let mut codes: Vec<u8> = Vec::new();
    let mut at = start;
    let mut backtrack = 4u8;
    let limit = 4 * pixels.len() + 8;
    loop {
        let found = (1..=8u8)
            .map(|k| (backtrack + 8 - k) % 8)
            .find(|&d| {
                let (dx, dy) = DIRECTIONS[d as usize];
                inside(at.0 + dx, at.1 + dy)
            });
        let Some(d) = found else {
            break; // isolated pixel
        };
        if at == start && codes.first() == Some(&d) {
            break;
        }
        codes.push(d);
        let (dx, dy) = DIRECTIONS[d as usize];
        let (nx, ny) = DIRECTIONS[((d + 1) % 8) as usize];
        backtrack = direction_of((nx - dx, ny - dy));
        at = (at.0 + dx, at.1 + dy);
        if codes.len() > limit {
            break;
        }
    }
    ChainCode {
        start: (start_px.x, start_px.y),
        codes,
    }
}

/// Circularity `4 pi A / P^2` against [`CIRCULARITY_CUTOFF`]. Regions of at
/// most two pixels have no meaningful contour and count as circular.
pub fn shape_descriptor(chain: &ChainCode, area: usize) -> Shape {
    if area <= 2 || chain.codes.is_empty() {
        return Shape::CircularOrElliptical;
    }
    let p = chain.perimeter();
    let circularity = 4.0 * std::f64::consts::PI * area as f64 / (p * p);
    if circularity >= CIRCULARITY_CUTOFF {
        Shape::CircularOrElliptical
    } else {
        Shape::Other
    }
}

/// Compute the feature vector and store the traced contour on the region.
pub fn extract_features(region: &mut Region) -> FeatureVector {
    let chain = freeman_chain(&region.pixels);
    let shape = shape_descriptor(&chain, region.area());
    region.contour = Some(chain);
    FeatureVector {
        area: region.area(),
        centroid: centroid(&region.pixels),
        bbox: min_bbox(&region.pixels),
        shape,
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn px(list: &[(u32, u32)]) -> Vec<Pixel> {
        list.iter().map(|&(x, y)| Pixel::new(x, y)).collect()
    }

    fn block(x0: u32, y0: u32, w: u32, h: u32) -> Vec<Pixel> {
        let mut v = Vec::new();
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                v.push(Pixel::new(x, y));
            }
        }
        v
    }

    fn disc(cx: i64, cy: i64, r: i64) -> Vec<Pixel> {
        let mut v = Vec::new();
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                    v.push(Pixel::new(x as u32, y as u32));
                }
            }
        }
        v
    }

    fn region(pixels: Vec<Pixel>) -> Region {
        Region::from_pixels(1, pixels, 1000, 1000)
    }

    #[test]
    fn square_block_features() {
        let mut r = region(block(0, 0, 2, 2));
        let f = extract_features(&mut r);
        assert_eq!(f.area, 4);
        assert_eq!(f.centroid, (0.5, 0.5));
        assert_eq!(f.bbox, BBox { min_x: 0, min_y: 0, max_x: 1, max_y: 1 });
        assert_eq!(f.shape, Shape::CircularOrElliptical);
        assert!(r.contour.is_some());
    }

    #[test]
    fn single_pixel_features() {
        let mut r = region(px(&[(3, 3)]));
        let f = extract_features(&mut r);
        assert_eq!(f.centroid, (3.0, 3.0));
        assert_eq!(f.bbox, BBox { min_x: 3, min_y: 3, max_x: 3, max_y: 3 });
        assert_eq!(f.shape, Shape::CircularOrElliptical);
        assert!(r.contour.unwrap().codes.is_empty());
    }

    #[test]
    fn lines_are_other() {
        assert_eq!(extract_features(&mut region(block(0, 0, 10, 1))).shape, Shape::Other);
        assert_eq!(extract_features(&mut region(block(5, 5, 1, 20))).shape, Shape::Other);
        // Hand count for the 1x20 line: 38 straight steps, 4*pi*20/38^2.
        let chain = freeman_chain(&block(0, 0, 1, 20));
        assert_eq!(chain.codes.len(), 38);
        let c = 4.0 * std::f64::consts::PI * 20.0 / (38.0f64 * 38.0);
        assert!((c - 0.174).abs() < 1e-3);
    }

    #[test]
    fn centroid_examples() {
        assert_eq!(centroid(&px(&[(0, 0), (2, 0)])), (1.0, 0.0));
        assert_eq!(centroid(&block(10, 10, 3, 3)), (11.0, 11.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Pixel> = (0..50)
            .map(|_| Pixel::new(rng.random_range(0..500), rng.random_range(0..500)))
            .collect();
        let mut sx = 0.0;
        let mut sy = 0.0;
        for p in &pts {
            sx += p.x as f64 / 50.0;
            sy += p.y as f64 / 50.0;
        }
        let c = centroid(&pts);
        assert!((c.0 - sx).abs() < 1e-9 && (c.1 - sy).abs() < 1e-9);
    }

    #[test]
    fn bbox_examples() {
        assert_eq!(
            min_bbox(&px(&[(1, 2), (4, 7)])),
            BBox { min_x: 1, min_y: 2, max_x: 4, max_y: 7 }
        );
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Pixel> = (0..40)
            .map(|_| Pixel::new(rng.random_range(5..90), rng.random_range(5..90)))
            .collect();
        let b = min_bbox(&pts);
        assert_eq!(b.min_x, pts.iter().map(|p| p.x).min().unwrap());
        assert_eq!(b.max_y, pts.iter().map(|p| p.y).max().unwrap());
    }

    #[test]
    fn hand_traced_chains() {
        assert_eq!(freeman_chain(&block(0, 0, 2, 2)).codes, vec![0, 6, 4, 2]);
        assert_eq!(freeman_chain(&block(4, 4, 3, 1)).codes, vec![0, 0, 4, 4]);
        // Diagonal pair (8-connected): down-right then back.
        assert_eq!(freeman_chain(&px(&[(0, 0), (1, 1)])).codes, vec![7, 3]);
        // L shape: (0,0) (0,1) (1,1).
        assert_eq!(
            freeman_chain(&px(&[(0, 0), (0, 1), (1, 1)])).codes,
            vec![7, 4, 2]
        );
    }

    #[test]
    fn discs_are_circular() {
        for r in 3..=15 {
            let pts = disc(50, 50, r);
            let chain = freeman_chain(&pts);
            assert_eq!(
                shape_descriptor(&chain, pts.len()),
                Shape::CircularOrElliptical,
                "radius {r}"
            );
        }
        let pts = disc(50, 50, 10);
        let chain = freeman_chain(&pts);
        let c = 4.0 * std::f64::consts::PI * pts.len() as f64 / chain.perimeter().powi(2);
        assert!(c > 0.85, "{c}");
        assert_eq!(shape_descriptor(&freeman_chain(&px(&[(0, 0), (1, 0)])), 2), Shape::CircularOrElliptical);
    }

    /// Random 4-connected blob grown from a seed.
    fn blob(rng: &mut ChaCha8Rng, n: usize) -> Vec<Pixel> {
        let mut set = std::collections::BTreeSet::new();
        set.insert((20u32, 20u32));
        while set.len() < n {
            let all: Vec<_> = set.iter().copied().collect();
            let (x, y) = all[rng.random_range(0..all.len())];
            let (dx, dy) = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)][rng.random_range(0..4)];
            set.insert(((x as i64 + dx) as u32, (y as i64 + dy) as u32));
        }
        set.into_iter().map(|(x, y)| Pixel::new(x, y)).collect()
    }

    #[test]
    fn chain_visits_only_region_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(2..60);
            let pts = blob(&mut rng, n);
            let set: std::collections::HashSet<_> = pts.iter().map(|p| (p.x as i64, p.y as i64)).collect();
            let chain = freeman_chain(&pts);
            for p in chain.walk() {
                assert!(set.contains(&p));
            }
        }
    }

    proptest! {
        #[test]
        fn translation_invariance(seed in 0u64..1000, dx in 0u32..50, dy in 0u32..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..40);
            let pts = blob(&mut rng, n);
            let moved: Vec<Pixel> = pts.iter().map(|p| Pixel::new(p.x + dx, p.y + dy)).collect();
            let pts_copy = pts.clone();
            let (a, b) = (extract_features(&mut region(pts)), extract_features(&mut region(moved.clone())));
            prop_assert_eq!(a.area, b.area);
            prop_assert!((a.centroid.0 + dx as f64 - b.centroid.0).abs() < 1e-9);
            prop_assert!((a.centroid.1 + dy as f64 - b.centroid.1).abs() < 1e-9);
            prop_assert_eq!(a.bbox.min_x + dx, b.bbox.min_x);
            prop_assert_eq!(a.bbox.max_y + dy, b.bbox.max_y);
            prop_assert_eq!(a.shape, b.shape);
            prop_assert_eq!(freeman_chain(&pts_copy).codes, freeman_chain(&moved).codes);
        }

        #[test]
        fn chain_walk_closes(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..80);
            let chain = freeman_chain(&blob(&mut rng, n));
            let walk = chain.walk();
            prop_assert_eq!(walk.first(), walk.last());
        }

        #[test]
        fn bbox_covers_area(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..80);
            let pts = blob(&mut rng, n);
            let f = extract_features(&mut region(pts));
            prop_assert!(f.bbox.area() >= f.area as u64);
            prop_assert!(f.bbox.contains(f.centroid.0, f.centroid.1));
        }
    }
}
