//! The incremental global map: hash-indexed cells holding GP layers and a
//! bounded raw-point residue, fused by recursive inverse-variance updates.

use std::collections::HashMap;
use std::io::{self, Write};

use crate::geometry::{Direction, PointCloud};
use crate::gp::{reconstruct_cell, KernelConfig, Layer, Sample};
use crate::grid::{regionalize, select_directions, CellBucket, CellIndex, GridConfig};

/// Repeated fusion shrinks variances geometrically; the floor keeps the
/// alignment weights finite.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct MapCell {
    /// At most one layer per direction.
    pub layers: Vec<Layer>,
    /// Raw points kept when the cell was too sparse to reconstruct.
    pub raw_residue: PointCloud,
}

impl MapCell {
    pub fn layer(&self, direction: Direction) -> Option<&Layer> {
        self.layers.iter().find(|l| l.direction == direction)
    }
}

/// World-frame map (or a single reconstructed frame: a frame is a map built
/// from one cloud).
#[derive(Clone, Debug)]
pub struct GPMap {
    pub cells: HashMap<CellIndex, MapCell>,
    pub grid: GridConfig,
    pub kernel: KernelConfig,
}

/// Inverse-variance fusion of two samples at the same lattice location:
/// `var = v_m * v_c / (v_m + v_c)`, `mean = (v_m * f_c + v_c * f_m) / (v_m + v_c)`.
pub fn fuse_sample(map_sample: &Sample, cur_sample: &Sample) -> Sample {
    debug_assert_eq!(map_sample.direction, cur_sample.direction);
    debug_assert_eq!(map_sample.lattice_id, cur_sample.lattice_id);
    let (vm, vc) = (map_sample.variance, cur_sample.variance);
    let denom = vm + vc;
    Sample {
        mean: (vm * cur_sample.mean + vc * map_sample.mean) / denom,
        variance: ((vm * vc) / denom).max(VARIANCE_FLOOR),
        ..*map_sample
    }
}

fn fuse_layers(map_layer: &mut Layer, cur_layer: &Layer) {
    debug_assert_eq!(map_layer.samples.len(), cur_layer.samples.len());
    for (m, c) in map_layer.samples.iter_mut().zip(&cur_layer.samples) {
        *m = fuse_sample(m, c);
    }
    map_layer.training_count = map_layer.training_count.max(cur_layer.training_count);
}

impl GPMap {
    pub fn new(grid: GridConfig, kernel: KernelConfig) -> GPMap {
        GPMap {
            cells: HashMap::new(),
            grid,
            kernel,
        }
    }

    /// Regionalize, select directions and reconstruct a world-frame cloud.
    /// Cells that produce no layer keep their (capped) raw points instead.
    pub fn from_cloud(cloud: &PointCloud, grid: GridConfig, kernel: KernelConfig) -> GPMap {
        let mut map = GPMap::new(grid, kernel);
        for (idx, mut bucket) in regionalize(cloud, &grid) {
            bucket.active_directions = select_directions(&bucket.raw_points, &grid);
            let layers = reconstruct_cell(&bucket, idx, &grid, &kernel);
            let raw_residue = if layers.is_empty() {
                cap_residue(bucket.raw_points, grid.samples_per_layer())
            } else {
                Vec::new()
            };
            map.cells.insert(idx, MapCell { layers, raw_residue });
        }
        map
    }

    /// Fuse a registered frame into the map. New cells and layers are
    /// inserted verbatim; overlapping layers fuse sample-by-sample; raw
    /// residue accumulates and is reconstructed once it reaches `min_points`.
    pub fn fuse_frame(&mut self, frame: GPMap) {
        let grid = self.grid;
        let kernel = self.kernel;
        for (idx, fcell) in frame.cells {
            match self.cells.entry(idx) {
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(fcell);
                }
                std::collections::hash_map::Entry::Occupied(mut e) => {
                    let mcell = e.get_mut();
                    for flayer in fcell.layers {
                        match mcell
                            .layers
                            .iter_mut()
                            .find(|l| l.direction == flayer.direction)
                        {
                            Some(ml) => fuse_layers(ml, &flayer),
                            None => mcell.layers.push(flayer),
                        }
                    }
                    if !fcell.raw_residue.is_empty() {
                        mcell.raw_residue.extend(fcell.raw_residue);
                        try_reconstruct_residue(mcell, idx, &grid, &kernel);
                    }
                }
            }
        }
    }

    pub fn query_samples(&self, index: CellIndex, direction: Direction) -> Option<&Layer> {
        self.cells.get(&index).and_then(|c| c.layer(direction))
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn sample_count(&self) -> usize {
        self.cells
            .values()
            .map(|c| c.layers.iter().map(|l| l.samples.len()).sum::<usize>())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// All sample positions below the variance threshold, as a point cloud.
    pub fn sample_cloud(&self, variance_thr: Option<f64>) -> PointCloud {
        let mut indices: Vec<&CellIndex> = self.cells.keys().collect();
        indices.sort();
        let mut out = Vec::new();
        for idx in indices {
            let cell = &self.cells[idx];
            let mut layers: Vec<&Layer> = cell.layers.iter().collect();
            layers.sort_by_key(|l| l.direction);
            for layer in layers {
                for s in &layer.samples {
                    if variance_thr.is_none_or(|t| s.variance <= t) {
                        out.push(s.position());
                    }
                }
            }
        }
        out
    }

    /// ASCII export, one sample per line: `x y z variance direction`.
    pub fn export_samples<W: Write>(
        &self,
        w: &mut W,
        variance_thr: Option<f64>,
    ) -> io::Result<()> {
        writeln!(w, "# gpslam map export")?;
        writeln!(w, "# frame: world, right-handed, z-up, units: meters")?;
        match variance_thr {
            Some(t) => writeln!(w, "# variance threshold: {t}")?,
            None => writeln!(w, "# variance threshold: none")?,
        }
        writeln!(w, "# columns: x y z variance direction")?;
        let mut indices: Vec<&CellIndex> = self.cells.keys().collect();
        indices.sort();
        for idx in indices {
            let cell = &self.cells[idx];
            let mut layers: Vec<&Layer> = cell.layers.iter().collect();
            layers.sort_by_key(|l| l.direction);
            for layer in layers {
                for s in &layer.samples {
                    if variance_thr.is_some_and(|t| s.variance > t) {
                        continue;
                    }
                    let p = s.position();
                    writeln!(
                        w,
                        "{:.6} {:.6} {:.6} {:.6e} {}",
                        p.x,
                        p.y,
                        p.z,
                        s.variance,
                        s.direction.letter()
                    )?;
                }
            }
        }
        Ok(())
    }
}

fn cap_residue(mut residue: PointCloud, cap: usize) -> PointCloud {
    residue.truncate(cap);
    residue
}

fn try_reconstruct_residue(
    cell: &mut MapCell,
    idx: CellIndex,
    grid: &GridConfig,
    kernel: &KernelConfig,
) {
    if cell.raw_residue.len() < grid.min_points {
        return;
    }
    let bucket = CellBucket {
        active_directions: select_directions(&cell.raw_residue, grid),
        raw_points: std::mem::take(&mut cell.raw_residue),
    };
    let layers = reconstruct_cell(&bucket, idx, grid, kernel);
    if layers.is_empty() {
        cell.raw_residue = cap_residue(bucket.raw_points, grid.samples_per_layer());
        return;
    }
    for layer in layers {
        match cell
            .layers
            .iter_mut()
            .find(|l| l.direction == layer.direction)
        {
            Some(ml) => fuse_layers(ml, &layer),
            None => cell.layers.push(layer),
        }
    }
}
