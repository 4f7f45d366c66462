//! Pairing of parasites with macrophage nuclei.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::segment::Region;
use crate::{Error, Result};

/// A nucleus reduced to what association needs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nucleus {
    pub id: u32,
    pub centroid: (f64, f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssocMode {
    /// Parasite and macrophage share a cytoplasm region.
    Cytoplasm,
    /// Macrophage centroid within the association radius.
    Radius,
    /// Both conditions.
    #[default]
    Both,
}

impl std::str::FromStr for AssocMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cytoplasm" => Ok(AssocMode::Cytoplasm),
            "radius" => Ok(AssocMode::Radius),
            "both" => Ok(AssocMode::Both),
            _ => Err(Error::Parameter(format!("unknown association mode '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    /// `(parasite id, macrophage id)`, in parasite input order.
    pub pairs: Vec<(u32, u32)>,
    pub unassociated: Vec<u32>,
    pub infected_macrophages: BTreeSet<u32>,
    pub mode: AssocMode,
}

/// Lookup from pixel to cytoplasm region id (0 = none).
#[derive(Clone, Debug)]
pub struct CytoplasmMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl CytoplasmMap {
    pub fn new(width: usize, height: usize, regions: &[Region]) -> Self {
        let mut labels = vec![0u32; width * height];
        for r in regions {
            for p in &r.pixels {
                labels[p.y as usize * width + p.x as usize] = r.id;
            }
        }
        Self { width, height, labels }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::new(width, height, &[])
    }

    /// Region containing the pixel nearest to `(x, y)`, if any.
    pub fn region_at(&self, x: f64, y: f64) -> Option<u32> {
        let (px, py) = ((x + 0.5).floor(), (y + 0.5).floor());
        if px < 0.0 || py < 0.0 || px >= self.width as f64 || py >= self.height as f64 {
            return None;
        }
        match self.labels[py as usize * self.width + px as usize] {
            0 => None,
            id => Some(id),
        }
    }
}

/// Distances closer than this count as equal; the lower id then wins.
const TIE_EPS: f64 = 1e-9;

/// Assign every parasite to at most one macrophage: the nearest candidate
/// under `mode`, ties broken toward the lower macrophage id.
pub fn associate(
    macrophages: &[Nucleus],
    parasites: &[Nucleus],
    cytoplasm: &CytoplasmMap,
    mode: AssocMode,
    radius: f64,
) -> Result<AssociationResult> {
    if mode != AssocMode::Cytoplasm && !(radius > 0.0) {
        return Err(Error::Parameter(format!("association radius must be positive, got {radius}")));
    }
    let mut sorted: Vec<&Nucleus> = macrophages.iter().collect();
    sorted.sort_by_key(|m| m.id);
    let home: Vec<Option<u32>> = sorted
        .iter()
        .map(|m| cytoplasm.region_at(m.centroid.0, m.centroid.1))
        .collect();

    let mut result = AssociationResult {
        pairs: Vec::new(),
        unassociated: Vec::new(),
        infected_macrophages: BTreeSet::new(),
        mode,
    };
    for p in parasites {
        let p_home = cytoplasm.region_at(p.centroid.0, p.centroid.1);
        let mut best: Option<(f64, u32)> = None;
        for (m, m_home) in sorted.iter().zip(&home) {
            let d = (m.centroid.0 - p.centroid.0).hypot(m.centroid.1 - p.centroid.1);
            let shares = p_home.is_some() && p_home == *m_home;
            let near = d <= radius;
            let ok = match mode {
                AssocMode::Cytoplasm => shares,
                AssocMode::Radius => near,
                AssocMode::Both => shares && near,
            };
            if ok && best.is_none_or(|(bd, _)| d < bd - TIE_EPS) {
                best = Some((d, m.id));
            }
        }
        match best {
            Some((_, m)) => {
                result.pairs.push((p.id, m));
                result.infected_macrophages.insert(m);
            }
            None => result.unassociated.push(p.id),
        }
    }
    Ok(result)
}
