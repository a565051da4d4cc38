//! Rectangular observation windows, regular computational grids, and the
//! bookkeeping that connects point patterns and regional count data to grid
//! cells.
//!
//! All field computations run on an extended grid (the observation grid
//! wrapped onto a torus at least twice its size in each dimension, rounded up
//! to powers of two) so that covariance matrices become block circulant.
//! Observation cells are indexed row-major with x fastest, `iy * nx + ix`;
//! the extended grid uses the same convention with its own dimensions.

use crate::error::{LgcpError, Result};

/// Axis-aligned observation window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Window {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        if !(xmin.is_finite() && ymin.is_finite() && xmax.is_finite() && ymax.is_finite()) {
            return Err(LgcpError::invalid("window bounds must be finite"));
        }
        if xmax <= xmin || ymax <= ymin {
            return Err(LgcpError::invalid(format!(
                "window must have positive extent, got [{xmin}, {xmax}] x [{ymin}, {ymax}]"
            )));
        }
        Ok(Window { xmin, ymin, xmax, ymax })
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn shorter_side(&self) -> f64 {
        self.width().min(self.height())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.xmin && x <= self.xmax && y >= self.ymin && y <= self.ymax
    }
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// A regular grid over a window together with its extended torus.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    window: Window,
    nx: usize,
    ny: usize,
    ext_nx: usize,
    ext_ny: usize,
    extension_factor: f64,
}

impl GridSpec {
    /// Builds an `nx` by `ny` grid over `window`. The extended torus is at
    /// least `extension_factor` times the observation grid in each dimension,
    /// rounded up to the next power of two.
    pub fn build(window: Window, nx: usize, ny: usize, extension_factor: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(LgcpError::invalid("grid dimensions must be positive"));
        }
        if !extension_factor.is_finite() || extension_factor < 2.0 {
            return Err(LgcpError::invalid(format!(
                "extension factor must be at least 2, got {extension_factor}"
            )));
        }
        let ext_nx = next_pow2((extension_factor * nx as f64).ceil() as usize);
        let ext_ny = next_pow2((extension_factor * ny as f64).ceil() as usize);
        Ok(GridSpec { window, nx, ny, ext_nx, ext_ny, extension_factor })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn ext_nx(&self) -> usize {
        self.ext_nx
    }

    pub fn ext_ny(&self) -> usize {
        self.ext_ny
    }

    pub fn extension_factor(&self) -> f64 {
        self.extension_factor
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_ext_cells(&self) -> usize {
        self.ext_nx * self.ext_ny
    }

    pub fn cell_width(&self) -> f64 {
        self.window.width() / self.nx as f64
    }

    pub fn cell_height(&self) -> f64 {
        self.window.height() / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_width() * self.cell_height()
    }

    /// Index of an observation cell, row-major with x fastest.
    pub fn obs_index(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny);
        iy * self.nx + ix
    }

    /// Index of an extended-grid cell.
    pub fn ext_index(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.ext_nx && iy < self.ext_ny);
        iy * self.ext_nx + ix
    }

    /// Extended-grid index of the observation cell `o`. The observation grid
    /// occupies the lower-left corner of the torus.
    pub fn obs_to_ext(&self, o: usize) -> usize {
        let ix = o % self.nx;
        let iy = o / self.nx;
        self.ext_index(ix, iy)
    }

    /// Centroid of observation cell `(ix, iy)`.
    pub fn cell_centroid(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.window.xmin + (ix as f64 + 0.5) * self.cell_width(),
            self.window.ymin + (iy as f64 + 0.5) * self.cell_height(),
        )
    }

    /// Distance from the origin cell to extended cell `(ix, iy)` on the torus.
    pub fn toroidal_lag(&self, ix: usize, iy: usize) -> f64 {
        let dx = ix.min(self.ext_nx - ix) as f64 * self.cell_width();
        let dy = iy.min(self.ext_ny - iy) as f64 * self.cell_height();
        dx.hypot(dy)
    }

    /// Cell containing `(x, y)`. Cells are closed on their low edges; the
    /// caller is responsible for snapping points off the max edges first.
    pub fn cell_of_point(&self, x: f64, y: f64) -> (usize, usize) {
        let ix = (((x - self.window.xmin) / self.cell_width()).floor() as usize).min(self.nx - 1);
        let iy = (((y - self.window.ymin) / self.cell_height()).floor() as usize).min(self.ny - 1);
        (ix, iy)
    }
}

/// A point pattern in a window, optionally marked with type labels and
/// discrete observation times.
///
/// Coordinates exactly on the max edge of the window are snapped inward by
/// `1e-9` times the corresponding side length at construction so that
/// low-edge-closed binning assigns every point to a cell.
#[derive(Clone, Debug)]
pub struct PointPattern {
    window: Window,
    xs: Vec<f64>,
    ys: Vec<f64>,
    marks: Option<Vec<u32>>,
    n_types: usize,
    times: Option<Vec<f64>>,
}

impl PointPattern {
    pub fn new(window: Window, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(LgcpError::invalid("coordinate vectors must have equal length"));
        }
        let eps_x = 1e-9 * window.width();
        let eps_y = 1e-9 * window.height();
        let mut xs = xs;
        let mut ys = ys;
        for i in 0..xs.len() {
            let (x, y) = (xs[i], ys[i]);
            if !x.is_finite() || !y.is_finite() || !window.contains(x, y) {
                return Err(LgcpError::invalid(format!(
                    "point {i} at ({x}, {y}) lies outside the window"
                )));
            }
            if x == window.xmax {
                xs[i] = window.xmax - eps_x;
            }
            if y == window.ymax {
                ys[i] = window.ymax - eps_y;
            }
        }
        Ok(PointPattern { window, xs, ys, marks: None, n_types: 1, times: None })
    }

    /// Attaches type labels in `1..=n_types`. Multitype analyses require at
    /// least two types.
    pub fn with_marks(mut self, marks: Vec<u32>, n_types: usize) -> Result<Self> {
        if marks.len() != self.n() {
            return Err(LgcpError::invalid("one mark per point required"));
        }
        if n_types < 2 {
            return Err(LgcpError::invalid("marked patterns need at least 2 types"));
        }
        if let Some(&bad) = marks.iter().find(|&&m| m == 0 || m as usize > n_types) {
            return Err(LgcpError::invalid(format!(
                "mark {bad} outside 1..={n_types}"
            )));
        }
        self.marks = Some(marks);
        self.n_types = n_types;
        Ok(self)
    }

    /// Attaches discrete observation times in `1..=n_steps`.
    pub fn with_times(mut self, times: Vec<f64>, n_steps: usize) -> Result<Self> {
        if times.len() != self.n() {
            return Err(LgcpError::invalid("one time per point required"));
        }
        if let Some(&bad) = times
            .iter()
            .find(|&&t| !t.is_finite() || t.fract() != 0.0 || t < 1.0 || t > n_steps as f64)
        {
            return Err(LgcpError::invalid(format!(
                "time {bad} is not an integer in 1..={n_steps}"
            )));
        }
        self.times = Some(times);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.xs.len()
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn marks(&self) -> Option<&[u32]> {
        self.marks.as_deref()
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn times(&self) -> Option<&[f64]> {
        self.times.as_deref()
    }
}

fn check_same_window(pattern: &PointPattern, grid: &GridSpec) -> Result<()> {
    if *pattern.window() != *grid.window() {
        return Err(LgcpError::invalid(
            "pattern window does not match the grid window",
        ));
    }
    Ok(())
}

/// Counts points per observation cell, low edges closed.
pub fn bin_points(pattern: &PointPattern, grid: &GridSpec) -> Result<Vec<u64>> {
    check_same_window(pattern, grid)?;
    let mut counts = vec![0u64; grid.n_cells()];
    for i in 0..pattern.n() {
        let (ix, iy) = grid.cell_of_point(pattern.xs()[i], pattern.ys()[i]);
        counts[grid.obs_index(ix, iy)] += 1;
    }
    Ok(counts)
}

/// Counts points per cell separately for each type label.
pub fn bin_points_by_type(pattern: &PointPattern, grid: &GridSpec) -> Result<Vec<Vec<u64>>> {
    check_same_window(pattern, grid)?;
    let marks = pattern
        .marks()
        .ok_or_else(|| LgcpError::invalid("pattern carries no type labels"))?;
    let mut counts = vec![vec![0u64; grid.n_cells()]; pattern.n_types()];
    for i in 0..pattern.n() {
        let (ix, iy) = grid.cell_of_point(pattern.xs()[i], pattern.ys()[i]);
        counts[(marks[i] - 1) as usize][grid.obs_index(ix, iy)] += 1;
    }
    Ok(counts)
}

/// Counts points per cell separately for each discrete time step `1..=n_steps`.
pub fn bin_points_by_time(
    pattern: &PointPattern,
    grid: &GridSpec,
    n_steps: usize,
) -> Result<Vec<Vec<u64>>> {
    check_same_window(pattern, grid)?;
    let times = pattern
        .times()
        .ok_or_else(|| LgcpError::invalid("pattern carries no observation times"))?;
    if let Some(&bad) = times.iter().find(|&&t| t > n_steps as f64) {
        return Err(LgcpError::invalid(format!("time {bad} exceeds {n_steps} steps")));
    }
    let mut counts = vec![vec![0u64; grid.n_cells()]; n_steps];
    for i in 0..pattern.n() {
        let (ix, iy) = grid.cell_of_point(pattern.xs()[i], pattern.ys()[i]);
        counts[times[i] as usize - 1][grid.obs_index(ix, iy)] += 1;
    }
    Ok(counts)
}

/// Assignment of observation cells to regions with known count totals.
/// Region ids run from 1 to the number of regions; 0 marks cells outside the
/// observed partition.
#[derive(Clone, Debug)]
pub struct RegionPartition {
    region_of_cell: Vec<u32>,
    totals: Vec<u64>,
}

impl RegionPartition {
    pub fn new(region_of_cell: Vec<u32>, totals: Vec<u64>) -> Result<Self> {
        let n_regions = totals.len();
        if n_regions == 0 {
            return Err(LgcpError::invalid("partition needs at least one region"));
        }
        if let Some(&bad) = region_of_cell.iter().find(|&&r| r as usize > n_regions) {
            return Err(LgcpError::invalid(format!(
                "region id {bad} exceeds the {n_regions} region totals supplied"
            )));
        }
        Ok(RegionPartition { region_of_cell, totals })
    }

    pub fn n_regions(&self) -> usize {
        self.totals.len()
    }

    pub fn region_of_cell(&self) -> &[u32] {
        &self.region_of_cell
    }

    pub fn totals(&self) -> &[u64] {
        &self.totals
    }
}

/// Cell lists for each region plus the cells outside every region.
#[derive(Clone, Debug)]
pub struct RegionMasks {
    pub cells_by_region: Vec<Vec<usize>>,
    pub outside: Vec<usize>,
}

/// Resolves a partition against a grid, checking that every region with a
/// positive total has at least one cell to receive it.
pub fn region_mask(partition: &RegionPartition, grid: &GridSpec) -> Result<RegionMasks> {
    if partition.region_of_cell().len() != grid.n_cells() {
        return Err(LgcpError::invalid(format!(
            "partition covers {} cells but the grid has {}",
            partition.region_of_cell().len(),
            grid.n_cells()
        )));
    }
    let mut cells_by_region = vec![Vec::new(); partition.n_regions()];
    let mut outside = Vec::new();
    for (cell, &r) in partition.region_of_cell().iter().enumerate() {
        if r == 0 {
            outside.push(cell);
        } else {
            cells_by_region[(r - 1) as usize].push(cell);
        }
    }
    for (idx, cells) in cells_by_region.iter().enumerate() {
        if cells.is_empty() && partition.totals()[idx] > 0 {
            return Err(LgcpError::invalid(format!(
                "region {} has total {} but no cells",
                idx + 1,
                partition.totals()[idx]
            )));
        }
    }
    Ok(RegionMasks { cells_by_region, outside })
}
