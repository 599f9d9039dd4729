//! Uniform cell-centered meshes on 1D intervals and 2D rectangles.
//!
//! Fields are stored component-major: component `i` of a [`CellField`]
//! occupies `values[i * n_cells .. (i + 1) * n_cells]`, cells in row-major
//! order (`c = iy * nx + ix`). Faces are interior faces only, x-normal faces
//! first (`k = iy * (nx - 1) + ix`, between cells `ix` and `ix + 1`), then
//! y-normal faces (`k = iy * nx + ix`, between rows `iy` and `iy + 1`).
//! Boundary faces are never stored; their normal flux is zero.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt17;
use crate::par::{self, Exec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    hx: f64,
    hy: f64,
    #[serde(skip)]
    exec: Exec,
}

impl Grid {
    pub fn new_1d(cells: usize, length: f64) -> Result<Self> {
        Self::build(1, cells, 1, length, 1.0)
    }

    pub fn new_2d(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if ny < 2 {
            return Err(Error::InvalidData(format!(
                "2D grid needs at least 2 cells along y, got {ny}"
            )));
        }
        Self::build(2, nx, ny, lx, ly)
    }

    /// Builds a grid from per-axis lengths and cell counts (one or two axes).
    pub fn from_axes(lengths: &[f64], cells: &[usize]) -> Result<Self> {
        match (lengths, cells) {
            ([lx], [nx]) => Self::new_1d(*nx, *lx),
            ([lx, ly], [nx, ny]) => Self::new_2d(*nx, *ny, *lx, *ly),
            _ => Err(Error::InvalidData(format!(
                "grid needs 1 or 2 axes with matching lengths/cells, got {} and {}",
                lengths.len(),
                cells.len()
            ))),
        }
    }

    fn build(dim: usize, nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 2 {
            return Err(Error::InvalidData(format!(
                "grid needs at least 2 cells along x, got {nx}"
            )));
        }
        for (axis, len) in [("x", lx), ("y", ly)] {
            if !(len.is_finite() && len > 0.0) {
                return Err(Error::InvalidData(format!(
                    "domain length along {axis} must be positive, got {len}"
                )));
            }
        }
        Ok(Grid {
            dim,
            nx,
            ny,
            lx,
            ly,
            hx: lx / nx as f64,
            hy: if dim == 2 { ly / ny as f64 } else { 1.0 },
            exec: Exec::default(),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis; the y entry is 1 for 1D grids.
    pub fn extents(&self) -> [usize; 2] {
        [self.nx, self.ny]
    }

    pub fn lengths(&self) -> Vec<f64> {
        if self.dim == 1 {
            vec![self.lx]
        } else {
            vec![self.lx, self.ly]
        }
    }

    /// Spacing per axis (only the first `dim` entries are meaningful).
    pub fn spacing(&self) -> [f64; 2] {
        [self.hx, self.hy]
    }

    pub fn max_spacing(&self) -> f64 {
        if self.dim == 1 {
            self.hx
        } else {
            self.hx.max(self.hy)
        }
    }

    /// Σ over axes of 1/h².
    pub fn inv_h2_sum(&self) -> f64 {
        let mut s = 1.0 / (self.hx * self.hx);
        if self.dim == 2 {
            s += 1.0 / (self.hy * self.hy);
        }
        s
    }

    pub fn cell_volume(&self) -> f64 {
        if self.dim == 1 {
            self.hx
        } else {
            self.hx * self.hy
        }
    }

    /// Measure of the whole domain.
    pub fn measure(&self) -> f64 {
        if self.dim == 1 {
            self.lx
        } else {
            self.lx * self.ly
        }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_x_faces(&self) -> usize {
        (self.nx - 1) * self.ny
    }

    pub fn n_y_faces(&self) -> usize {
        if self.dim == 2 {
            self.nx * (self.ny - 1)
        } else {
            0
        }
    }

    pub fn n_faces(&self) -> usize {
        self.n_x_faces() + self.n_y_faces()
    }

    /// Faces per cell in the interior: 2·dim.
    pub fn faces_per_cell(&self) -> usize {
        2 * self.dim
    }

    pub fn cell_center(&self, c: usize) -> [f64; 2] {
        let ix = c % self.nx;
        let iy = c / self.nx;
        let x = (ix as f64 + 0.5) * self.hx;
        let y = if self.dim == 2 {
            (iy as f64 + 0.5) * self.hy
        } else {
            0.0
        };
        [x, y]
    }

    /// Cells on the (left/lower, right/upper) sides of face `k` and its spacing.
    #[inline]
    pub fn face_cells(&self, k: usize) -> (usize, usize, f64) {
        let nxf = self.n_x_faces();
        if k < nxf {
            let w = self.nx - 1;
            let (iy, ix) = (k / w, k % w);
            let left = iy * self.nx + ix;
            (left, left + 1, self.hx)
        } else {
            let k = k - nxf;
            (k, k + self.nx, self.hy)
        }
    }

    /// Discrete gradient of one component: `(phi_R - phi_L)/h` per interior face.
    pub fn gradient_into(&self, phi: &[f64], out: &mut [f64]) {
        debug_assert_eq!(phi.len(), self.n_cells());
        debug_assert_eq!(out.len(), self.n_faces());
        let (nx, hx, hy) = (self.nx, self.hx, self.hy);
        let (xs, ys) = out.split_at_mut(self.n_x_faces());
        par::fill_chunks(self.exec, xs, |start, chunk| {
            let w = nx - 1;
            let (mut iy, mut ix) = (start / w, start % w);
            for slot in chunk {
                let c = iy * nx + ix;
                *slot = (phi[c + 1] - phi[c]) / hx;
                ix += 1;
                if ix == w {
                    ix = 0;
                    iy += 1;
                }
            }
        });
        par::fill_chunks(self.exec, ys, |start, chunk| {
            for (k, slot) in chunk.iter_mut().enumerate() {
                let c = start + k;
                *slot = (phi[c + nx] - phi[c]) / hy;
            }
        });
    }

    /// Net outgoing flux per cell divided by spacing, one component.
    pub fn divergence_into(&self, flux: &[f64], out: &mut [f64]) {
        debug_assert_eq!(flux.len(), self.n_faces());
        debug_assert_eq!(out.len(), self.n_cells());
        let nx = self.nx;
        let ny = self.ny;
        let nxf = self.n_x_faces();
        let two_d = self.dim == 2;
        let (hx, hy) = (self.hx, self.hy);
        par::fill_chunks(self.exec, out, |start, chunk| {
            let w = nx - 1;
            let (mut iy, mut ix) = (start / nx, start % nx);
            for slot in chunk {
                let east = if ix + 1 < nx { flux[iy * w + ix] } else { 0.0 };
                let west = if ix > 0 { flux[iy * w + ix - 1] } else { 0.0 };
                let mut d = (east - west) / hx;
                if two_d {
                    let north = if iy + 1 < ny { flux[nxf + iy * nx + ix] } else { 0.0 };
                    let south = if iy > 0 {
                        flux[nxf + (iy - 1) * nx + ix]
                    } else {
                        0.0
                    };
                    d += (north - south) / hy;
                }
                *slot = d;
                ix += 1;
                if ix == nx {
                    ix = 0;
                    iy += 1;
                }
            }
        });
    }

    /// Donor-cell flux `velocity × u_upwind` per interior face, one component.
    /// The caller guarantees `u >= 0`.
    pub fn upwind_into(&self, u: &[f64], velocity: &[f64], out: &mut [f64]) {
        debug_assert_eq!(velocity.len(), self.n_faces());
        let nx = self.nx;
        let nxf = self.n_x_faces();
        let donor = |v: f64, l: f64, r: f64| if v > 0.0 { v * l } else { v * r };
        let (xs, ys) = out.split_at_mut(nxf);
        let (vx, vy) = velocity.split_at(nxf);
        par::fill_chunks(self.exec, xs, |start, chunk| {
            let w = nx - 1;
            let (mut iy, mut ix) = (start / w, start % w);
            for (k, slot) in chunk.iter_mut().enumerate() {
                let c = iy * nx + ix;
                *slot = donor(vx[start + k], u[c], u[c + 1]);
                ix += 1;
                if ix == w {
                    ix = 0;
                    iy += 1;
                }
            }
        });
        par::fill_chunks(self.exec, ys, |start, chunk| {
            for (k, slot) in chunk.iter_mut().enumerate() {
                let c = start + k;
                *slot = donor(vy[c], u[c], u[c + nx]);
            }
        });
    }

    /// Midpoint-rule integral of one component.
    pub fn integrate_component(&self, phi: &[f64]) -> f64 {
        self.cell_volume() * par::sum_indexed(self.exec, phi.len(), |c| phi[c])
    }

    /// Face-quadrature integral: Σ over interior faces × cell volume.
    pub fn integrate_faces(&self, values: &[f64]) -> f64 {
        self.cell_volume() * par::sum_indexed(self.exec, values.len(), |k| values[k])
    }
}

/// One real per cell per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellField {
    n_comp: usize,
    n_cells: usize,
    values: Vec<f64>,
}

impl CellField {
    pub fn zeros(n_comp: usize, n_cells: usize) -> Self {
        CellField {
            n_comp,
            n_cells,
            values: vec![0.0; n_comp * n_cells],
        }
    }

    /// Spatially constant field with one value per component.
    pub fn uniform(values: &[f64], n_cells: usize) -> Self {
        let mut f = Self::zeros(values.len(), n_cells);
        for (i, &v) in values.iter().enumerate() {
            f.component_mut(i).fill(v);
        }
        f
    }

    pub fn from_fn(n_comp: usize, n_cells: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(n_comp, n_cells);
        for i in 0..n_comp {
            for c in 0..n_cells {
                out.values[i * n_cells + c] = f(i, c);
            }
        }
        out
    }

    /// Wraps component-major values.
    pub fn from_values(n_comp: usize, n_cells: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_comp * n_cells {
            return Err(Error::DimensionMismatch {
                what: "cell field values",
                expected: n_comp * n_cells,
                found: values.len(),
            });
        }
        Ok(CellField {
            n_comp,
            n_cells,
            values,
        })
    }

    pub fn n_comp(&self) -> usize {
        self.n_comp
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cells..(i + 1) * self.n_cells]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.n_cells..(i + 1) * self.n_cells]
    }

    #[inline]
    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.values[i * self.n_cells + c]
    }

    #[inline]
    pub fn set(&mut self, i: usize, c: usize, v: f64) {
        self.values[i * self.n_cells + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Component vector at one cell.
    pub fn at_cell(&self, c: usize) -> Vec<f64> {
        (0..self.n_comp).map(|i| self.get(i, c)).collect()
    }

    /// First negative entry as `(component, cell, value)`.
    pub fn first_negative(&self) -> Option<(usize, usize, f64)> {
        self.values
            .iter()
            .position(|&v| v < 0.0)
            .map(|k| (k / self.n_cells, k % self.n_cells, self.values[k]))
    }

    pub fn max_abs_diff(&self, other: &CellField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_shape(&self, n_comp: usize, n_cells: usize, what: &'static str) -> Result<()> {
        if self.n_cells != n_cells {
            return Err(Error::DimensionMismatch {
                what,
                expected: n_cells,
                found: self.n_cells,
            });
        }
        if self.n_comp != n_comp {
            return Err(Error::DimensionMismatch {
                what,
                expected: n_comp,
                found: self.n_comp,
            });
        }
        Ok(())
    }
}

/// One real per interior face per component.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    n_comp: usize,
    n_faces: usize,
    values: Vec<f64>,
}

impl FaceField {
    pub fn zeros(n_comp: usize, n_faces: usize) -> Self {
        FaceField {
            n_comp,
            n_faces,
            values: vec![0.0; n_comp * n_faces],
        }
    }

    pub fn from_fn(n_comp: usize, n_faces: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(n_comp, n_faces);
        for i in 0..n_comp {
            for k in 0..n_faces {
                out.values[i * n_faces + k] = f(i, k);
            }
        }
        out
    }

    pub fn n_comp(&self) -> usize {
        self.n_comp
    }

    pub fn n_faces(&self) -> usize {
        self.n_faces
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_faces..(i + 1) * self.n_faces]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.n_faces..(i + 1) * self.n_faces]
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n_faces + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

fn check_cells(grid: &Grid, phi: &CellField) -> Result<()> {
    if phi.n_cells() != grid.n_cells() {
        return Err(Error::DimensionMismatch {
            what: "cell field vs grid",
            expected: grid.n_cells(),
            found: phi.n_cells(),
        });
    }
    Ok(())
}

fn check_faces(grid: &Grid, flux: &FaceField) -> Result<()> {
    if flux.n_faces() != grid.n_faces() {
        return Err(Error::DimensionMismatch {
            what: "face field vs grid",
            expected: grid.n_faces(),
            found: flux.n_faces(),
        });
    }
    Ok(())
}

pub fn face_gradient(grid: &Grid, phi: &CellField) -> Result<FaceField> {
    check_cells(grid, phi)?;
    let mut out = FaceField::zeros(phi.n_comp(), grid.n_faces());
    for i in 0..phi.n_comp() {
        grid.gradient_into(phi.component(i), out.component_mut(i));
    }
    Ok(out)
}

pub fn cell_divergence(grid: &Grid, flux: &FaceField) -> Result<CellField> {
    check_faces(grid, flux)?;
    let mut out = CellField::zeros(flux.n_comp(), grid.n_cells());
    for i in 0..flux.n_comp() {
        grid.divergence_into(flux.component(i), out.component_mut(i));
    }
    Ok(out)
}

/// Midpoint rule, one value per component.
pub fn integrate(grid: &Grid, phi: &CellField) -> Result<Vec<f64>> {
    check_cells(grid, phi)?;
    Ok((0..phi.n_comp())
        .map(|i| grid.integrate_component(phi.component(i)))
        .collect())
}

pub fn face_upwind(grid: &Grid, u: &CellField, velocity: &FaceField) -> Result<FaceField> {
    check_cells(grid, u)?;
    check_faces(grid, velocity)?;
    if velocity.n_comp() != u.n_comp() {
        return Err(Error::DimensionMismatch {
            what: "upwind velocity components",
            expected: u.n_comp(),
            found: velocity.n_comp(),
        });
    }
    if let Some((species, cell, value)) = u.first_negative() {
        return Err(Error::NegativeDensity {
            species,
            cell,
            value,
        });
    }
    let mut out = FaceField::zeros(u.n_comp(), grid.n_faces());
    for i in 0..u.n_comp() {
        grid.upwind_into(u.component(i), velocity.component(i), out.component_mut(i));
    }
    Ok(out)
}

/// Five-point (three-point in 1D) Laplacian with homogeneous Neumann boundaries.
pub fn laplacian(grid: &Grid, phi: &CellField) -> Result<CellField> {
    let grad = face_gradient(grid, phi)?;
    cell_divergence(grid, &grad)
}

/// Writes a field snapshot as CSV: `x[,y],species_1..species_N`, one row per
/// cell in row-major order, 17 significant digits.
pub fn write_field_csv<W: Write>(grid: &Grid, field: &CellField, mut w: W) -> std::io::Result<()> {
    let mut header = String::from("x");
    if grid.dim() == 2 {
        header.push_str(",y");
    }
    for i in 1..=field.n_comp() {
        header.push_str(&format!(",species_{i}"));
    }
    writeln!(w, "{header}")?;
    let mut line = String::new();
    for c in 0..field.n_cells() {
        line.clear();
        let [x, y] = grid.cell_center(c);
        line.push_str(&fmt17(x));
        if grid.dim() == 2 {
            line.push(',');
            line.push_str(&fmt17(y));
        }
        for i in 0..field.n_comp() {
            line.push(',');
            line.push_str(&fmt17(field.get(i, c)));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_1d(grid: &Grid) -> CellField {
        CellField::from_fn(1, grid.n_cells(), |_, c| grid.cell_center(c)[0])
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new_1d(1, 1.0).is_err());
        assert!(Grid::new_1d(4, 0.0).is_err());
        assert!(Grid::new_2d(4, 1, 1.0, 1.0).is_err());
        assert!(Grid::from_axes(&[1.0], &[4, 4]).is_err());
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = Grid::new_2d(5, 4, 1.0, 2.0).unwrap();
        let phi = CellField::uniform(&[3.25], g.n_cells());
        let grad = face_gradient(&g, &phi).unwrap();
        assert!(grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_linear_1d() {
        let g = Grid::new_1d(10, 1.0).unwrap();
        let grad = face_gradient(&g, &linear_1d(&g)).unwrap();
        assert_eq!(grad.n_faces(), 9);
        for &v in grad.component(0) {
            assert_relative_eq!(v, 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn gradient_of_linear_2d() {
        let g = Grid::new_2d(6, 5, 1.0, 1.0).unwrap();
        let phi = CellField::from_fn(1, g.n_cells(), |_, c| {
            let [x, y] = g.cell_center(c);
            x + 2.0 * y
        });
        let grad = face_gradient(&g, &phi).unwrap();
        let (gx, gy) = grad.component(0).split_at(g.n_x_faces());
        assert_eq!(gy.len(), g.n_y_faces());
        gx.iter().for_each(|&v| assert_relative_eq!(v, 1.0, epsilon = 1e-12));
        gy.iter().for_each(|&v| assert_relative_eq!(v, 2.0, epsilon = 1e-12));
    }

    #[test]
    fn divergence_of_zero_flux() {
        let g = Grid::new_2d(3, 3, 1.0, 1.0).unwrap();
        let div = cell_divergence(&g, &FaceField::zeros(2, g.n_faces())).unwrap();
        assert!(div.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_integrates_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for g in [Grid::new_1d(17, 2.0).unwrap(), Grid::new_2d(7, 9, 1.0, 3.0).unwrap()] {
            let flux = FaceField::from_fn(2, g.n_faces(), |_, _| rng.gen_range(-5.0..5.0));
            let div = cell_divergence(&g, &flux).unwrap();
            let scale: f64 = flux.as_slice().iter().map(|v| v.abs()).sum();
            for total in integrate(&g, &div).unwrap() {
                assert!(total.abs() <= 1e-13 * scale, "{total}");
            }
        }
    }

    #[test]
    fn summation_by_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for g in [Grid::new_1d(23, 1.0).unwrap(), Grid::new_2d(8, 6, 2.0, 1.0).unwrap()] {
            let n = g.n_cells();
            let phi = CellField::from_fn(1, n, |_, _| rng.gen_range(-1.0..1.0));
            let w = CellField::from_fn(1, n, |_, _| rng.gen_range(-1.0..1.0));
            let c = CellField::from_fn(1, n, |_, _| rng.gen_range(0.1..2.0));
            // flux = face-averaged weight × gradient
            let mut flux = face_gradient(&g, &phi).unwrap();
            for k in 0..g.n_faces() {
                let (l, r, _) = g.face_cells(k);
                flux.component_mut(0)[k] *= 0.5 * (c.get(0, l) + c.get(0, r));
            }
            let div = cell_divergence(&g, &flux).unwrap();
            let lhs: f64 = (0..n).map(|k| w.get(0, k) * div.get(0, k)).sum::<f64>() * g.cell_volume();
            let gw = face_gradient(&g, &w).unwrap();
            let rhs: f64 = -(0..g.n_faces()).map(|k| gw.get(0, k) * flux.get(0, k)).sum::<f64>()
                * g.cell_volume();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
        }
    }

    #[test]
    fn midpoint_integrals() {
        let g = Grid::new_1d(37, 1.0).unwrap();
        let one = integrate(&g, &CellField::uniform(&[1.0], g.n_cells())).unwrap();
        assert_relative_eq!(one[0], 1.0, epsilon = 1e-15);

        let g2 = Grid::new_2d(4, 5, 2.0, 1.5).unwrap();
        let c = integrate(&g2, &CellField::uniform(&[2.5], g2.n_cells())).unwrap();
        assert_relative_eq!(c[0], 2.5 * 3.0, epsilon = 1e-14);

        let g = Grid::new_1d(100, 1.0).unwrap();
        let lin = integrate(&g, &linear_1d(&g)).unwrap();
        assert_relative_eq!(lin[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn upwind_picks_donor_cell() {
        let g = Grid::new_1d(2, 1.0).unwrap();
        let u = CellField::from_values(1, 2, vec![2.0, 5.0]).unwrap();
        let plus = FaceField::from_fn(1, 1, |_, _| 1.0);
        assert_eq!(face_upwind(&g, &u, &plus).unwrap().get(0, 0), 2.0);
        let minus = FaceField::from_fn(1, 1, |_, _| -1.0);
        assert_eq!(face_upwind(&g, &u, &minus).unwrap().get(0, 0), -5.0);
        let zero = FaceField::zeros(1, 1);
        assert_eq!(face_upwind(&g, &u, &zero).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn upwind_constant_density_scales_velocity() {
        let g = Grid::new_2d(4, 3, 1.0, 1.0).unwrap();
        let u = CellField::uniform(&[1.5], g.n_cells());
        let v = FaceField::from_fn(1, g.n_faces(), |_, k| (k as f64) - 5.0);
        let f = face_upwind(&g, &u, &v).unwrap();
        for k in 0..g.n_faces() {
            assert_eq!(f.get(0, k), 1.5 * v.get(0, k));
        }
    }

    #[test]
    fn upwind_rejects_negative_density() {
        let g = Grid::new_1d(3, 1.0).unwrap();
        let u = CellField::from_values(1, 3, vec![1.0, -1e-3, 1.0]).unwrap();
        let v = FaceField::zeros(1, 2);
        assert!(matches!(
            face_upwind(&g, &u, &v),
            Err(Error::NegativeDensity { cell: 1, .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let g = Grid::new_1d(4, 1.0).unwrap();
        let phi = CellField::zeros(1, 5);
        assert!(matches!(face_gradient(&g, &phi), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(
            cell_divergence(&g, &FaceField::zeros(1, 4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn csv_snapshot_layout() {
        let g = Grid::new_2d(2, 2, 1.0, 1.0).unwrap();
        let u = CellField::from_fn(2, 4, |i, c| (i * 10 + c) as f64);
        let mut buf = Vec::new();
        write_field_csv(&g, &u, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,species_1,species_2");
        assert_eq!(lines.len(), 5);
        let row: Vec<f64> = lines[2].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(row, vec![0.75, 0.25, 1.0, 11.0]);
    }
}
