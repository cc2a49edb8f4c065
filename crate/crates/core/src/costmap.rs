//! Projection of a 3D traversability map onto a 2D planning costmap.
//!
//! Three stages: a support surface picked per column, virtual cells
//! inpainted from their neighbourhood in two passes, and an exponential
//! cost that turns low-traversability cells fatal.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::voxel_map::{key_map, KeyMap, VoxelKey, VoxelMap};

/// Traversability of one voxel and whether it holds lidar endpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TeVoxel<T> {
    pub p_tau: T,
    pub observed: bool,
}

pub type TeMap<T> = KeyMap<TeVoxel<T>>;

/// Pairs predictions with the map's observation flags. Voxels without a
/// prediction are left out.
pub fn te_map_from<T: Real>(map: &VoxelMap<T>, predictions: &KeyMap<T>) -> TeMap<T> {
    let mut out = key_map();
    for (key, p) in predictions {
        if let Some(v) = map.get(key) {
            out.insert(*key, TeVoxel { p_tau: *p, observed: v.n_endpoints > 0 });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostmapParams<T> {
    /// Voxels above the ground averaged into `p_bar`.
    pub n_window: usize,
    /// Highest admissible ground above the reference height, m.
    pub z_max: T,
    /// Side of the inpainting kernel (odd).
    pub kernel: usize,
    /// Minimum neighbour count for a virtual cell.
    pub n_adj: usize,
    pub lambda_tau: T,
}

impl<T: Real> Default for CostmapParams<T> {
    fn default() -> Self {
        Self { n_window: 10, z_max: T::lit(0.5), kernel: 5, n_adj: 5, lambda_tau: T::lit(0.3) }
    }
}

/// Height the ground limit is measured from.
#[derive(Clone, Debug, PartialEq)]
pub enum ReferenceZ<T> {
    Constant(T),
    /// z of the trajectory position closest in the plane.
    Trajectory(Vec<[T; 3]>),
}

impl<T: Real> ReferenceZ<T> {
    pub fn at(&self, x: T, y: T) -> T {
        match self {
            ReferenceZ::Constant(z) => *z,
            ReferenceZ::Trajectory(poses) => {
                let mut best = (T::infinity(), T::zero());
                for p in poses {
                    let d = (p[0] - x) * (p[0] - x) + (p[1] - y) * (p[1] - y);
                    if d < best.0 {
                        best = (d, p[2]);
                    }
                }
                best.1
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellClass {
    Observed,
    Virtual,
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SurfaceCell<T> {
    Empty,
    Observed { p_bar: T, z: T },
    Virtual { p_bar: T, z: T },
}

impl<T: Copy> SurfaceCell<T> {
    pub fn cls(&self) -> CellClass {
        match self {
            SurfaceCell::Empty => CellClass::Empty,
            SurfaceCell::Observed { .. } => CellClass::Observed,
            SurfaceCell::Virtual { .. } => CellClass::Virtual,
        }
    }

    pub fn p_bar(&self) -> Option<T> {
        match *self {
            SurfaceCell::Empty => None,
            SurfaceCell::Observed { p_bar, .. } | SurfaceCell::Virtual { p_bar, .. } => Some(p_bar),
        }
    }

    pub fn z(&self) -> Option<T> {
        match *self {
            SurfaceCell::Empty => None,
            SurfaceCell::Observed { z, .. } | SurfaceCell::Virtual { z, .. } => Some(z),
        }
    }
}

/// Row-major grid of surface cells; row `r`, column `c` covers the voxel
/// column `(u0 + c, v0 + r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceGrid<T> {
    pub width: usize,
    pub height: usize,
    pub resolution: T,
    pub u0: i32,
    pub v0: i32,
    pub cells: Vec<SurfaceCell<T>>,
}

impl<T: Real> SurfaceGrid<T> {
    pub fn empty(width: usize, height: usize, resolution: T, u0: i32, v0: i32) -> Self {
        Self { width, height, resolution, u0, v0, cells: vec![SurfaceCell::Empty; width * height] }
    }

    pub fn get(&self, col: usize, row: usize) -> &SurfaceCell<T> {
        &self.cells[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, cell: SurfaceCell<T>) {
        self.cells[row * self.width + col] = cell;
    }

    /// World coordinates of the lower-left corner of the grid.
    pub fn origin(&self) -> (T, T) {
        (T::lit(f64::from(self.u0)) * self.resolution, T::lit(f64::from(self.v0)) * self.resolution)
    }

    /// Cell containing the world point `(x, y)`, if inside the grid.
    pub fn cell_at(&self, x: T, y: T) -> Option<(usize, usize)> {
        let c = (x / self.resolution).floor().to_i64()? - i64::from(self.u0);
        let r = (y / self.resolution).floor().to_i64()? - i64::from(self.v0);
        (c >= 0 && r >= 0 && (c as usize) < self.width && (r as usize) < self.height).then_some((c as usize, r as usize))
    }

    pub fn count(&self, cls: CellClass) -> usize {
        self.cells.iter().filter(|c| c.cls() == cls).count()
    }

    /// Inclusive `(col_min, row_min, col_max, row_max)` of observed cells.
    pub fn observed_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for row in 0..self.height {
            for col in 0..self.width {
                if self.get(col, row).cls() == CellClass::Observed {
                    b = Some(match b {
                        None => (col, row, col, row),
                        Some((c0, r0, c1, r1)) => (c0.min(col), r0.min(row), c1.max(col), r1.max(row)),
                    });
                }
            }
        }
        b
    }
}

/// Picks the ground voxel of every column and averages traversability in
/// the window above it.
pub fn support_surface<T: Real>(
    te: &TeMap<T>,
    resolution: T,
    reference: &ReferenceZ<T>,
    params: &CostmapParams<T>,
) -> SurfaceGrid<T> {
    if te.is_empty() {
        return SurfaceGrid::empty(0, 0, resolution, 0, 0);
    }
    let (mut u_lo, mut v_lo, mut u_hi, mut v_hi) = (i32::MAX, i32::MAX, i32::MIN, i32::MIN);
    let mut columns: KeyMap<Vec<(i32, TeVoxel<T>)>> = key_map();
    for (key, v) in te {
        u_lo = u_lo.min(key.i);
        v_lo = v_lo.min(key.j);
        u_hi = u_hi.max(key.i);
        v_hi = v_hi.max(key.j);
        if v.observed {
            columns.entry(VoxelKey::new(key.i, key.j, 0)).or_default().push((key.k, *v));
        }
    }
    let width = (u_hi - u_lo + 1) as usize;
    let height = (v_hi - v_lo + 1) as usize;
    let mut grid = SurfaceGrid::empty(width, height, resolution, u_lo, v_lo);
    let half = T::lit(0.5);
    for (col_key, mut voxels) in columns {
        voxels.sort_by_key(|(k, _)| *k);
        let x = (T::lit(f64::from(col_key.i)) + half) * resolution;
        let y = (T::lit(f64::from(col_key.j)) + half) * resolution;
        let limit = reference.at(x, y) + params.z_max;
        let center_z = |k: i32| (T::lit(f64::from(k)) + half) * resolution;
        let Some(&(k_ground, _)) = voxels.iter().find(|(k, _)| center_z(*k) <= limit) else {
            continue;
        };
        let top = k_ground + params.n_window as i32 - 1;
        let window: Vec<T> = voxels.iter().filter(|(k, _)| (k_ground..=top).contains(k)).map(|(_, v)| v.p_tau).collect();
        let p_bar = window.iter().copied().sum::<T>() / T::from_count(window.len() as u64);
        let (col, row) = ((col_key.i - u_lo) as usize, (col_key.j - v_lo) as usize);
        grid.set(col, row, SurfaceCell::Observed { p_bar, z: center_z(k_ground) });
    }
    grid
}

/// One synchronous inpainting sweep over the cells in `area`. Returns the
/// number of cells that became virtual.
fn inpaint_sweep<T: Real>(
    grid: &mut SurfaceGrid<T>,
    area: (usize, usize, usize, usize),
    params: &CostmapParams<T>,
    virtual_sources: bool,
) -> usize {
    let r = (params.kernel / 2) as isize;
    let before = grid.clone();
    let mut filled = 0;
    let (c0, r0, c1, r1) = area;
    for row in r0..=r1 {
        for col in c0..=c1 {
            if before.get(col, row).cls() != CellClass::Empty {
                continue;
            }
            let (mut n, mut sp, mut sz) = (0usize, T::zero(), T::zero());
            for dr in -r..=r {
                for dc in -r..=r {
                    let (cc, rr) = (col as isize + dc, row as isize + dr);
                    if cc < 0 || rr < 0 || cc as usize >= before.width || rr as usize >= before.height {
                        continue;
                    }
                    let src = before.get(cc as usize, rr as usize);
                    let usable = match src {
                        SurfaceCell::Observed { .. } => true,
                        SurfaceCell::Virtual { .. } => virtual_sources,
                        SurfaceCell::Empty => false,
                    };
                    if usable {
                        n += 1;
                        sp += src.p_bar().expect("non-empty");
                        sz += src.z().expect("non-empty");
                    }
                }
            }
            if n >= params.n_adj {
                let nf = T::from_count(n as u64);
                grid.set(col, row, SurfaceCell::Virtual { p_bar: sp / nf, z: sz / nf });
                filled += 1;
            }
        }
    }
    filled
}

fn check_kernel<T>(params: &CostmapParams<T>) -> Result<()> {
    if params.kernel % 2 == 0 {
        return Err(Error::Config(format!("kernel size {} must be odd", params.kernel)));
    }
    Ok(())
}

/// Fills every empty cell with at least `n_adj` observed neighbours, all
/// cells reading the state before the pass.
pub fn inpaint_observed<T: Real>(grid: &SurfaceGrid<T>, params: &CostmapParams<T>) -> Result<SurfaceGrid<T>> {
    check_kernel(params)?;
    let mut out = grid.clone();
    if grid.width > 0 && grid.height > 0 {
        inpaint_sweep(&mut out, (0, 0, grid.width - 1, grid.height - 1), params, false);
    }
    Ok(out)
}

/// Pass one is [`inpaint_observed`]. Pass two lets virtual cells act as
/// sources and repeats until nothing changes inside the observed bounding
/// box.
pub fn virtual_surface<T: Real>(grid: &SurfaceGrid<T>, params: &CostmapParams<T>) -> Result<SurfaceGrid<T>> {
    let mut out = inpaint_observed(grid, params)?;
    if let Some(bounds) = grid.observed_bounds() {
        while inpaint_sweep(&mut out, bounds, params, true) > 0 {}
    }
    Ok(out)
}

/// `10·exp(−6 p²) + 1` above the threshold, infinite otherwise.
pub fn cell_cost<T: Real>(p_bar: T, lambda_tau: T) -> T {
    if p_bar > lambda_tau {
        T::lit(10.0) * (T::lit(-6.0) * p_bar * p_bar).exp() + T::one()
    } else {
        T::infinity()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Costmap2D<T> {
    pub grid: SurfaceGrid<T>,
    pub cost: Vec<T>,
    pub lambda_tau: T,
}

impl<T: Real> Costmap2D<T> {
    pub fn cost_at(&self, col: usize, row: usize) -> T {
        self.cost[row * self.grid.width + col]
    }

    pub fn is_fatal(&self, col: usize, row: usize) -> bool {
        self.cost_at(col, row).is_infinite()
    }
}

pub fn cost_convert<T: Real>(grid: &SurfaceGrid<T>, lambda_tau: T) -> Costmap2D<T> {
    let cost = grid
        .cells
        .iter()
        .map(|c| c.p_bar().map_or(T::infinity(), |p| cell_cost(p, lambda_tau)))
        .collect();
    Costmap2D { grid: grid.clone(), cost, lambda_tau }
}

/// Support surface, virtual surface and cost conversion in one call.
pub fn build_costmap<T: Real>(
    te: &TeMap<T>,
    resolution: T,
    reference: &ReferenceZ<T>,
    params: &CostmapParams<T>,
) -> Result<Costmap2D<T>> {
    let surface = support_surface(te, resolution, reference, params);
    let filled = virtual_surface(&surface, params)?;
    Ok(cost_convert(&filled, params.lambda_tau))
}

#[derive(Serialize, Deserialize)]
struct ClassSidecar {
    width: usize,
    height: usize,
    cls: Vec<CellClass>,
}

/// Text grid: five `name value` header lines, then one line per row
/// (lowest y first) of space-separated costs, `inf` for fatal cells.
pub fn write_costmap<T: Real, W: Write>(cm: &Costmap2D<T>, mut w: W) -> Result<()> {
    let g = &cm.grid;
    let (ox, oy) = g.origin();
    writeln!(w, "width {}", g.width)?;
    writeln!(w, "height {}", g.height)?;
    writeln!(w, "resolution {}", g.resolution)?;
    writeln!(w, "origin_x {ox}")?;
    writeln!(w, "origin_y {oy}")?;
    for row in 0..g.height {
        let line: Vec<String> = (0..g.width)
            .map(|col| {
                let c = cm.cost_at(col, row);
                if c.is_infinite() {
                    "inf".to_string()
                } else {
                    c.to_string()
                }
            })
            .collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn write_class_sidecar<T: Real, W: Write>(cm: &Costmap2D<T>, w: W) -> Result<()> {
    let side = ClassSidecar {
        width: cm.grid.width,
        height: cm.grid.height,
        cls: cm.grid.cells.iter().map(SurfaceCell::cls).collect(),
    };
    serde_json::to_writer(w, &side)?;
    Ok(())
}

/// Header values and the cost grid of a file written by [`write_costmap`].
#[derive(Clone, Debug, PartialEq)]
pub struct CostGrid {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: (f64, f64),
    pub cost: Vec<f64>,
}

pub fn read_costmap<R: BufRead>(r: R) -> Result<CostGrid> {
    let bad = |line: usize, reason: String| Error::Format { what: "costmap", line, reason };
    let mut lines = r.lines();
    let mut header = [0.0f64; 5];
    for (i, name) in ["width", "height", "resolution", "origin_x", "origin_y"].iter().enumerate() {
        let line = lines.next().ok_or_else(|| bad(i + 1, "truncated header".into()))??;
        let value = line
            .strip_prefix(name)
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| bad(i + 1, format!("expected `{name} <value>`")))?;
        header[i] = value;
    }
    let (width, height) = (header[0] as usize, header[1] as usize);
    let mut cost = Vec::with_capacity(width * height);
    for row in 0..height {
        let line = lines.next().ok_or_else(|| bad(6 + row, "missing row".into()))??;
        let before = cost.len();
        for tok in line.split_whitespace() {
            let v = if tok == "inf" { f64::INFINITY } else { tok.parse().map_err(|_| bad(6 + row, format!("bad cost `{tok}`")))? };
            cost.push(v);
        }
        if cost.len() - before != width {
            return Err(bad(6 + row, format!("expected {width} values")));
        }
    }
    Ok(CostGrid { width, height, resolution: header[2], origin: (header[3], header[4]), cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> CostmapParams<f64> {
        CostmapParams::default()
    }

    fn voxel(p: f64) -> TeVoxel<f64> {
        TeVoxel { p_tau: p, observed: true }
    }

    #[test]
    fn cost_examples() {
        assert!((cell_cost(1.0, 0.3) - (10.0 * (-6.0f64).exp() + 1.0)).abs() < 1e-12);
        assert!((cell_cost(1.0f64, 0.3) - 1.0248).abs() < 1e-3);
        assert!((cell_cost(0.5f64, 0.3) - 3.2313).abs() < 1e-3);
        assert!(cell_cost(0.2f64, 0.3).is_infinite());
        assert!(cell_cost(0.3f64, 0.3).is_infinite());
    }

    #[test]
    fn window_mean_skips_unobserved() {
        let mut te = key_map();
        te.insert(VoxelKey::new(0, 0, 0), voxel(0.9));
        te.insert(VoxelKey::new(0, 0, 1), voxel(0.8));
        te.insert(VoxelKey::new(0, 0, 2), voxel(0.7));
        te.insert(VoxelKey::new(0, 0, 3), TeVoxel { p_tau: 0.0, observed: false });
        // Beyond the ten-voxel window.
        te.insert(VoxelKey::new(0, 0, 10), voxel(0.0));
        let g = support_surface(&te, 0.1, &ReferenceZ::Constant(0.0), &params());
        let SurfaceCell::Observed { p_bar, z } = *g.get(0, 0) else { panic!() };
        assert!((p_bar - 0.8).abs() < 1e-12);
        assert!((z - 0.05).abs() < 1e-12);
    }

    #[test]
    fn overhang_and_single_voxel() {
        let mut te = key_map();
        te.insert(VoxelKey::new(0, 0, 12), voxel(0.9));
        te.insert(VoxelKey::new(1, 0, 0), voxel(0.4));
        let g = support_surface(&te, 0.1, &ReferenceZ::Constant(0.0), &params());
        assert_eq!(g.get(0, 0).cls(), CellClass::Empty);
        assert_eq!(g.get(1, 0).p_bar(), Some(0.4));
    }

    #[test]
    fn reference_from_trajectory_picks_nearest() {
        let r = ReferenceZ::Trajectory(vec![[0.0, 0.0, 0.0], [10.0, 0.0, 2.0]]);
        assert_eq!(r.at(8.0, 1.0), 2.0);
        assert_eq!(r.at(1.0, 1.0), 0.0);
    }

    fn observed_grid(w: usize, h: usize, p: f64) -> SurfaceGrid<f64> {
        let mut g = SurfaceGrid::empty(w, h, 0.1, 0, 0);
        g.cells.fill(SurfaceCell::Observed { p_bar: p, z: 0.0 });
        g
    }

    #[test]
    fn neighbour_threshold() {
        let mut g = SurfaceGrid::empty(5, 5, 0.1, 0, 0);
        for (c, r) in [(0, 0), (1, 0), (2, 0), (3, 0)] {
            g.set(c, r, SurfaceCell::Observed { p_bar: 0.6, z: 0.0 });
        }
        let mut p1 = g.clone();
        inpaint_sweep(&mut p1, (0, 0, 4, 4), &params(), false);
        assert_eq!(p1.get(2, 2).cls(), CellClass::Empty);
        g.set(4, 0, SurfaceCell::Observed { p_bar: 0.6, z: 0.0 });
        g.set(4, 1, SurfaceCell::Observed { p_bar: 0.6, z: 0.0 });
        inpaint_sweep(&mut g, (0, 0, 4, 4), &params(), false);
        assert_eq!(*g.get(2, 2), SurfaceCell::Virtual { p_bar: 0.6, z: 0.0 });
    }

    #[test]
    fn single_hole_gets_24_neighbour_mean() {
        let mut g = observed_grid(7, 7, 0.5);
        let mut sum = 0.0;
        for r in 1..6 {
            for c in 1..6 {
                let p = 0.3 + 0.01 * (r * 7 + c) as f64;
                g.set(c, r, SurfaceCell::Observed { p_bar: p, z: 0.1 });
                if (c, r) != (3, 3) {
                    sum += p;
                }
            }
        }
        g.set(3, 3, SurfaceCell::Empty);
        let out = virtual_surface(&g, &params()).unwrap();
        let SurfaceCell::Virtual { p_bar, z } = *out.get(3, 3) else { panic!() };
        assert!((p_bar - sum / 24.0).abs() < 1e-12);
        assert!((z - 0.1).abs() < 1e-12);
    }

    #[test]
    fn pass_two_floods_only_inside_observed_bounds() {
        // Observed ring around a large hole; cells outside the ring's
        // bounding box must stay empty.
        let mut g = SurfaceGrid::empty(30, 30, 0.1, 0, 0);
        for i in 5..=20 {
            for (c, r) in [(i, 5), (i, 20), (5, i), (20, i)] {
                g.set(c, r, SurfaceCell::Observed { p_bar: 0.7, z: 0.0 });
            }
        }
        let out = virtual_surface(&g, &params()).unwrap();
        for r in 5..=20 {
            for c in 5..=20 {
                assert_ne!(out.get(c, r).cls(), CellClass::Empty, "({c},{r})");
            }
        }
        assert_eq!(out.get(25, 25).cls(), CellClass::Empty);
        assert_eq!(out.get(0, 0).cls(), CellClass::Empty);
    }

    #[test]
    fn even_kernel_is_rejected() {
        let p = CostmapParams { kernel: 4, ..params() };
        assert!(virtual_surface(&observed_grid(3, 3, 0.5), &p).is_err());
    }

    #[test]
    fn export_round_trip() {
        let mut te = key_map();
        for i in 0..4 {
            for j in 0..3 {
                te.insert(VoxelKey::new(i - 2, j + 7, 0), voxel(0.1 + 0.2 * i as f64));
            }
        }
        let cm = build_costmap(&te, 0.1, &ReferenceZ::Constant(0.0), &params()).unwrap();
        let mut buf = Vec::new();
        write_costmap(&cm, &mut buf).unwrap();
        let back = read_costmap(buf.as_slice()).unwrap();
        assert_eq!((back.width, back.height), (4, 3));
        assert!((back.origin.0 + 0.2).abs() < 1e-12 && (back.origin.1 - 0.7).abs() < 1e-12);
        assert_eq!(back.cost, cm.cost);
        assert!(back.cost[0].is_infinite());
        let mut side = Vec::new();
        write_class_sidecar(&cm, &mut side).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&side).unwrap();
        assert_eq!(v["cls"][0], "observed");
    }

    fn random_grid() -> impl Strategy<Value = SurfaceGrid<f64>> {
        (3usize..14, 3usize..14).prop_flat_map(|(w, h)| {
            proptest::collection::vec(prop_oneof![Just(None), (0.0f64..1.0, -1.0f64..1.0).prop_map(Some)], w * h).prop_map(
                move |cells| {
                    let mut g = SurfaceGrid::empty(w, h, 0.1, 0, 0);
                    for (slot, c) in g.cells.iter_mut().zip(cells) {
                        if let Some((p_bar, z)) = c {
                            *slot = SurfaceCell::Observed { p_bar, z };
                        }
                    }
                    g
                },
            )
        })
    }

    proptest! {
        #[test]
        fn cost_is_monotone_and_bounded(a in 0.3f64..1.0, b in 0.3f64..1.0) {
            prop_assume!(a > 0.3 && b > 0.3 && a < b);
            let (ca, cb) = (cell_cost(a, 0.3), cell_cost(b, 0.3));
            prop_assert!(ca > cb);
            prop_assert!(cb > 1.0 && ca <= 11.0);
        }

        #[test]
        fn inpainting_invariants(g in random_grid()) {
            let p = params();
            let mut p1 = g.clone();
            inpaint_sweep(&mut p1, (0, 0, g.width - 1, g.height - 1), &p, false);
            // Pass one depends only on observed cells: seeding virtual
            // cells elsewhere must not change what it fills.
            for row in 0..g.height {
                for col in 0..g.width {
                    if let SurfaceCell::Virtual { p_bar, z } = *p1.get(col, row) {
                        let r = 2isize;
                        let mut srcs = Vec::new();
                        for dr in -r..=r {
                            for dc in -r..=r {
                                let (c, rr) = (col as isize + dc, row as isize + dr);
                                if c >= 0 && rr >= 0 && (c as usize) < g.width && (rr as usize) < g.height {
                                    if let SurfaceCell::Observed { p_bar, z } = *g.get(c as usize, rr as usize) {
                                        srcs.push((p_bar, z));
                                    }
                                }
                            }
                        }
                        prop_assert!(srcs.len() >= 5);
                        let lo = srcs.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
                        let hi = srcs.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
                        prop_assert!(p_bar >= lo - 1e-12 && p_bar <= hi + 1e-12);
                        let mean_z = srcs.iter().map(|s| s.1).sum::<f64>() / srcs.len() as f64;
                        prop_assert!((z - mean_z).abs() < 1e-12);
                    }
                }
            }
            let full = virtual_surface(&g, &p).unwrap();
            let again = virtual_surface(&g, &p).unwrap();
            prop_assert_eq!(&full, &again);
            let cm = cost_convert(&full, 0.3);
            for (cell, c) in full.cells.iter().zip(&cm.cost) {
                let fatal = c.is_infinite();
                prop_assert_eq!(fatal, cell.p_bar().map_or(true, |p| p <= 0.3));
            }
            // Virtual values stay inside the range of all observed values.
            let obs: Vec<f64> = g.cells.iter().filter_map(|c| c.p_bar()).collect();
            if !obs.is_empty() {
                let lo = obs.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = obs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for c in &full.cells {
                    if let SurfaceCell::Virtual { p_bar, .. } = c {
                        prop_assert!(*p_bar >= lo - 1e-12 && *p_bar <= hi + 1e-12);
                    }
                }
            }
        }
    }
}
