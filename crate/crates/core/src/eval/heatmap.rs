use rand::Rng;

use super::gdop::gdop;
use crate::env::{AnchorId, AnchorLayout, MapRegion, Point};
use crate::error::{Error, Result};
use crate::numkit::DiagonalGaussian;
use crate::scheduler::{greedy_subset, random_subset};
use crate::trainer::Model;

/// Greedy anchor subset chosen at the center of each grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub nx: usize,
    pub ny: usize,
    pub k: usize,
    /// Row-major over `(cell_y, cell_x)`; ids sorted ascending.
    pub subsets: Vec<Vec<AnchorId>>,
    pub centers: Vec<Point>,
}

impl HeatmapGrid {
    pub fn cell(&self, cx: usize, cy: usize) -> &[AnchorId] {
        &self.subsets[cy * self.nx + cx]
    }
}

pub fn cell_centers(map: &MapRegion, nx: usize, ny: usize) -> Vec<Point> {
    let (w, h) = (map.width / nx as f64, map.height / ny as f64);
    (0..ny)
        .flat_map(|cy| (0..nx).map(move |cx| [(cx as f64 + 0.5) * w, (cy as f64 + 0.5) * h]))
        .collect()
}

/// Probes the actor at every cell center with a stationary target, the
/// prior stddev at its initial value and a zero recurrent state.
pub fn scheduling_heatmap(model: &Model, map: &MapRegion, deployment: &AnchorLayout, nx: usize, ny: usize) -> Result<HeatmapGrid> {
    if nx == 0 || ny == 0 {
        return Err(Error::contract("heatmap grid needs at least one cell per axis"));
    }
    if deployment.len() != model.ac.config.anchors {
        return Err(Error::contract(format!(
            "scheduler expects {} anchors, layout has {}",
            model.ac.config.anchors,
            deployment.len()
        )));
    }
    let ids = deployment.ids();
    let k = model.ac.config.k;
    let h = model.dssm.zero_hidden();
    let std0 = model.dssm.config.prior_std_init;
    let centers = cell_centers(map, nx, ny);
    let subsets = centers
        .iter()
        .map(|c| {
            let prior = DiagonalGaussian { mean: vec![c[0], c[1], 0.0, 0.0], stddev: vec![std0; 4] };
            let logits = model.ac.logits(&model.store, &model.dssm.policy_state(&prior, &h));
            let action = greedy_subset(&logits, k)?;
            let mut chosen: Vec<AnchorId> = action.indices().into_iter().map(|i| ids[i]).collect();
            chosen.sort_unstable();
            Ok(chosen)
        })
        .collect::<Result<Vec<Vec<AnchorId>>>>()?;
    Ok(HeatmapGrid { nx, ny, k, subsets, centers })
}

/// Mean GDOP of the heatmap's chosen subsets over the grid.
pub fn heatmap_mean_gdop(grid: &HeatmapGrid, layout: &AnchorLayout) -> Result<f64> {
    let mut total = 0.0;
    for (c, s) in grid.centers.iter().zip(&grid.subsets) {
        total += gdop(*c, &layout.select(s)?.positions());
    }
    Ok(total / grid.centers.len() as f64)
}

/// Mean GDOP over the grid of uniformly random K-subsets, `draws` per cell.
pub fn random_mean_gdop(grid: &HeatmapGrid, layout: &AnchorLayout, draws: usize, rng: &mut impl Rng) -> Result<f64> {
    let pos = layout.positions();
    let mut total = 0.0;
    for c in &grid.centers {
        let mut cell = 0.0;
        for _ in 0..draws {
            let a = random_subset(pos.len(), grid.k, rng)?;
            let chosen: Vec<Point> = a.indices().into_iter().map(|i| pos[i]).collect();
            cell += gdop(*c, &chosen);
        }
        total += cell / draws as f64;
    }
    Ok(total / grid.centers.len() as f64)
}
