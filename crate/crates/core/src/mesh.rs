//! Staggered (marker-and-cell) uniform grids and the discrete operators
//! built on them.
//!
//! Densities live at cell centres, velocities and fluxes on faces. In one
//! dimension a no-slip grid with `n` cells has `n + 1` faces, face `i` sitting
//! between cells `i - 1` and `i`; faces `0` and `n` are walls. A periodic grid
//! has `n` faces, face `i` being the left face of cell `i`.
//!
//! Two-dimensional grids store cell `(i, j)` at `j * nx + i`. Faces normal to
//! `x` are indexed `j * fx + i` with `fx = nx + 1` (no-slip) or `nx`
//! (periodic); faces normal to `y` are indexed `j * nx + i` with `j` running
//! over `ny + 1` (no-slip) or `ny` (periodic) rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// `u = 0` on the walls, `grad rho . n = 0`.
    #[serde(alias = "noslip")]
    NoSlip,
    Periodic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub extent: [f64; 2],
    pub cells: [usize; 2],
    pub bc: Boundary,
}

impl Grid {
    pub fn new_1d(cells: usize, extent: f64, bc: Boundary) -> Result<Self> {
        Self::new(1, [extent, 1.0], [cells, 1], bc)
    }

    pub fn new_2d(cells: [usize; 2], extent: [f64; 2], bc: Boundary) -> Result<Self> {
        Self::new(2, extent, cells, bc)
    }

    fn new(dim: usize, extent: [f64; 2], cells: [usize; 2], bc: Boundary) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Config(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        for axis in 0..dim {
            if cells[axis] < 2 {
                return Err(Error::Config(format!(
                    "grid needs at least 2 cells per axis, got {}",
                    cells[axis]
                )));
            }
            if !(extent[axis].is_finite() && extent[axis] > 0.0) {
                return Err(Error::Config(format!(
                    "grid extent must be positive, got {}",
                    extent[axis]
                )));
            }
        }
        Ok(Self {
            dim,
            extent,
            cells,
            bc,
        })
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.extent[0] / self.cells[0] as f64
    }

    #[inline]
    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent[axis] / self.cells[axis] as f64
    }

    /// Volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    pub fn n_cells(&self) -> usize {
        self.cells[..self.dim].iter().product()
    }

    fn faces_along(&self, axis: usize) -> usize {
        match self.bc {
            Boundary::NoSlip => self.cells[axis] + 1,
            Boundary::Periodic => self.cells[axis],
        }
    }

    /// Number of faces normal to `axis`.
    pub fn n_faces(&self, axis: usize) -> usize {
        if axis >= self.dim {
            return 0;
        }
        match (self.dim, axis) {
            (1, _) => self.faces_along(0),
            (_, 0) => self.faces_along(0) * self.cells[1],
            _ => self.cells[0] * self.faces_along(1),
        }
    }

    /// Cell-centre coordinates along `axis` (length `cells[axis]`).
    pub fn centers(&self, axis: usize) -> Vec<f64> {
        let h = self.spacing(axis);
        (0..self.cells[axis]).map(|i| (i as f64 + 0.5) * h).collect()
    }

    /// Face coordinates along `axis` (length `faces_along(axis)`).
    pub fn face_positions(&self, axis: usize) -> Vec<f64> {
        let h = self.spacing(axis);
        (0..self.faces_along(axis)).map(|i| i as f64 * h).collect()
    }

    /// Whether 1D face `f` is a wall.
    #[inline]
    pub fn is_wall_face(&self, f: usize) -> bool {
        self.bc == Boundary::NoSlip && (f == 0 || f == self.cells[0])
    }

    /// Cells adjacent to 1D face `f` as `(left, right)`.
    #[inline]
    pub fn face_neighbors(&self, f: usize) -> (usize, usize) {
        let n = self.cells[0];
        match self.bc {
            Boundary::Periodic => ((f + n - 1) % n, f % n),
            Boundary::NoSlip => (f.saturating_sub(1), f.min(n - 1)),
        }
    }

    /// Faces bounding 1D cell `c` as `(left, right)`.
    #[inline]
    pub fn cell_faces(&self, c: usize) -> (usize, usize) {
        let n = self.cells[0];
        match self.bc {
            Boundary::Periodic => (c, (c + 1) % n),
            Boundary::NoSlip => (c, c + 1),
        }
    }

    fn check_cells(&self, len: usize) -> Result<()> {
        if len != self.n_cells() {
            return Err(Error::SizeMismatch {
                expected: self.n_cells(),
                got: len,
            });
        }
        Ok(())
    }

    fn check_faces(&self, faces: &Faces) -> Result<()> {
        for axis in 0..2 {
            let got = faces.axis(axis).len();
            if got != self.n_faces(axis) {
                return Err(Error::SizeMismatch {
                    expected: self.n_faces(axis),
                    got,
                });
            }
        }
        Ok(())
    }

    pub fn zero_faces(&self) -> Faces {
        Faces {
            x: vec![0.0; self.n_faces(0)],
            y: vec![0.0; self.n_faces(1)],
        }
    }
}

/// A face-centred field: normal components on `x`-faces and `y`-faces.
/// `y` is empty on 1D grids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Faces {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Faces {
    pub fn one_d(x: Vec<f64>) -> Self {
        Self { x, y: Vec::new() }
    }

    pub fn axis(&self, axis: usize) -> &[f64] {
        if axis == 0 {
            &self.x
        } else {
            &self.y
        }
    }
}

/// Two-point difference of a cell field across each face.
///
/// Wall faces carry a zero gradient, which encodes the homogeneous Neumann
/// condition on the density.
pub fn grad_cell_to_face(field: &[f64], grid: &Grid) -> Result<Faces> {
    grid.check_cells(field.len())?;
    let mut out = grid.zero_faces();
    let nx = grid.cells[0];
    let ny = if grid.dim == 2 { grid.cells[1] } else { 1 };
    let periodic = grid.bc == Boundary::Periodic;

    let hx = grid.spacing(0);
    let fx = grid.faces_along(0);
    for j in 0..ny {
        for f in 0..fx {
            let v = if periodic {
                let l = (f + nx - 1) % nx;
                (field[j * nx + f] - field[j * nx + l]) / hx
            } else if f == 0 || f == nx {
                0.0
            } else {
                (field[j * nx + f] - field[j * nx + f - 1]) / hx
            };
            out.x[j * fx + f] = v;
        }
    }
    if grid.dim == 2 {
        let hy = grid.spacing(1);
        let fy = grid.faces_along(1);
        for g in 0..fy {
            for i in 0..nx {
                let v = if periodic {
                    let b = (g + ny - 1) % ny;
                    (field[g * nx + i] - field[b * nx + i]) / hy
                } else if g == 0 || g == ny {
                    0.0
                } else {
                    (field[g * nx + i] - field[(g - 1) * nx + i]) / hy
                };
                out.y[g * nx + i] = v;
            }
        }
    }
    Ok(out)
}

/// Divergence of a face flux, one value per cell.
pub fn div_face_to_cell(flux: &Faces, grid: &Grid) -> Result<Vec<f64>> {
    grid.check_faces(flux)?;
    let nx = grid.cells[0];
    let ny = if grid.dim == 2 { grid.cells[1] } else { 1 };
    let periodic = grid.bc == Boundary::Periodic;
    let mut out = vec![0.0; grid.n_cells()];

    let hx = grid.spacing(0);
    let fx = grid.faces_along(0);
    for j in 0..ny {
        for i in 0..nx {
            let right = if periodic { (i + 1) % nx } else { i + 1 };
            out[j * nx + i] = (flux.x[j * fx + right] - flux.x[j * fx + i]) / hx;
        }
    }
    if grid.dim == 2 {
        let hy = grid.spacing(1);
        for j in 0..ny {
            let top = if periodic { (j + 1) % ny } else { j + 1 };
            for i in 0..nx {
                out[j * nx + i] += (flux.y[top * nx + i] - flux.y[j * nx + i]) / hy;
            }
        }
    }
    Ok(out)
}

/// First-order upwind mass flux `u+ rho_left + u- rho_right` on every face.
pub fn upwind_mass_flux(rho: &[f64], u: &Faces, grid: &Grid) -> Result<Faces> {
    grid.check_cells(rho.len())?;
    grid.check_faces(u)?;
    let mut out = grid.zero_faces();
    let nx = grid.cells[0];
    let ny = if grid.dim == 2 { grid.cells[1] } else { 1 };
    let periodic = grid.bc == Boundary::Periodic;

    let fx = grid.faces_along(0);
    for j in 0..ny {
        for f in 0..fx {
            if !periodic && (f == 0 || f == nx) {
                continue;
            }
            let l = if periodic { (f + nx - 1) % nx } else { f - 1 };
            let r = f % nx;
            let v = u.x[j * fx + f];
            out.x[j * fx + f] = v.max(0.0) * rho[j * nx + l] + v.min(0.0) * rho[j * nx + r];
        }
    }
    if grid.dim == 2 {
        let fy = grid.faces_along(1);
        for g in 0..fy {
            if !periodic && (g == 0 || g == ny) {
                continue;
            }
            let b = if periodic { (g + ny - 1) % ny } else { g - 1 };
            let t = g % ny;
            for i in 0..nx {
                let v = u.y[g * nx + i];
                out.y[g * nx + i] = v.max(0.0) * rho[b * nx + i] + v.min(0.0) * rho[t * nx + i];
            }
        }
    }
    Ok(out)
}

/// A velocity gradient `G[i][j] = d u_i / d x_j` in `N` dimensions.
pub type Tensor<const N: usize> = [[f64; N]; N];

fn trace<const N: usize>(g: &Tensor<N>) -> f64 {
    (0..N).map(|i| g[i][i]).sum()
}

fn check_viscosity(mu: f64, eta: f64) -> Result<()> {
    if !(mu > 0.0) {
        return Err(Error::Config(format!(
            "shear viscosity mu must be > 0 (Newtonian stress), got {mu}"
        )));
    }
    if !(eta >= 0.0) {
        return Err(Error::Config(format!(
            "bulk viscosity eta must be >= 0, got {eta}"
        )));
    }
    Ok(())
}

/// Newtonian stress `mu (G + G^t - 2/3 tr(G) I) + eta tr(G) I`.
///
/// The factor `2/3` is kept in every dimension.
pub fn viscous_stress<const N: usize>(g: &Tensor<N>, mu: f64, eta: f64) -> Result<Tensor<N>> {
    check_viscosity(mu, eta)?;
    Ok(stress_unchecked(g, mu, eta))
}

#[inline]
pub(crate) fn stress_unchecked<const N: usize>(g: &Tensor<N>, mu: f64, eta: f64) -> Tensor<N> {
    let tr = trace(g);
    let mut s = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            s[i][j] = mu * (g[i][j] + g[j][i]);
        }
        s[i][i] += (eta - 2.0 / 3.0 * mu) * tr;
    }
    s
}

/// Pointwise `S(G):G` and the no-slip-equivalent `mu |G|^2 + lambda (tr G)^2`
/// with `lambda = mu/3 + eta`.
pub fn dissipation_density<const N: usize>(g: &Tensor<N>, mu: f64, eta: f64) -> Result<(f64, f64)> {
    check_viscosity(mu, eta)?;
    let s = stress_unchecked(g, mu, eta);
    let mut contraction = 0.0;
    let mut norm2 = 0.0;
    for i in 0..N {
        for j in 0..N {
            contraction += s[i][j] * g[i][j];
            norm2 += g[i][j] * g[i][j];
        }
    }
    let lambda = mu / 3.0 + eta;
    let tr = trace(g);
    Ok((contraction, mu * norm2 + lambda * tr * tr))
}

/// Field version of [`viscous_stress`].
pub fn viscous_stress_field<const N: usize>(
    grads: &[Tensor<N>],
    mu: f64,
    eta: f64,
) -> Result<Vec<Tensor<N>>> {
    check_viscosity(mu, eta)?;
    Ok(grads.iter().map(|g| stress_unchecked(g, mu, eta)).collect())
}

/// Field version of [`dissipation_density`], returning both densities.
pub fn dissipation_density_field<const N: usize>(
    grads: &[Tensor<N>],
    mu: f64,
    eta: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_viscosity(mu, eta)?;
    let mut a = Vec::with_capacity(grads.len());
    let mut b = Vec::with_capacity(grads.len());
    for g in grads {
        let (x, y) = dissipation_density(g, mu, eta)?;
        a.push(x);
        b.push(y);
    }
    Ok((a, b))
}

/// 1D face velocities averaged to cell centres.
pub fn faces_to_cells_1d(u: &[f64], grid: &Grid) -> Vec<f64> {
    (0..grid.cells[0])
        .map(|c| {
            let (l, r) = grid.cell_faces(c);
            0.5 * (u[l] + u[r])
        })
        .collect()
}

/// 1D cell values averaged to faces (arithmetic mean of the two neighbours;
/// wall faces take their single neighbour).
pub fn cells_to_faces_1d(rho: &[f64], grid: &Grid) -> Vec<f64> {
    let nf = grid.n_faces(0);
    (0..nf)
        .map(|f| {
            let (l, r) = grid.face_neighbors(f);
            0.5 * (rho[l] + rho[r])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn slope(h: &[f64], e: &[f64]) -> f64 {
        let n = h.len() as f64;
        let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
        let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        num / den
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        for bc in [Boundary::NoSlip, Boundary::Periodic] {
            let g = Grid::new_1d(16, 1.0, bc).unwrap();
            let grad = grad_cell_to_face(&[3.0; 16], &g).unwrap();
            assert!(grad.x.iter().all(|v| *v == 0.0));
            let g2 = Grid::new_2d([5, 4], [1.0, 2.0], bc).unwrap();
            let grad = grad_cell_to_face(&[1.5; 20], &g2).unwrap();
            assert!(grad.x.iter().chain(&grad.y).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn linear_field_on_noslip_grid() {
        let g = Grid::new_1d(10, 1.0, Boundary::NoSlip).unwrap();
        let f: Vec<f64> = g.centers(0).iter().map(|x| 3.0 * x + 1.0).collect();
        let grad = grad_cell_to_face(&f, &g).unwrap();
        assert_eq!(grad.x.len(), 11);
        assert_eq!(grad.x[0], 0.0);
        assert_eq!(grad.x[10], 0.0);
        for v in &grad.x[1..10] {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_gradient_is_second_order() {
        let ns = [64usize, 128, 256, 512];
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for &n in &ns {
            let g = Grid::new_1d(n, 1.0, Boundary::Periodic).unwrap();
            let f: Vec<f64> = g.centers(0).iter().map(|x| (2.0 * PI * x).sin()).collect();
            let grad = grad_cell_to_face(&f, &g).unwrap();
            let err = g
                .face_positions(0)
                .iter()
                .zip(&grad.x)
                .map(|(x, v)| (v - 2.0 * PI * (2.0 * PI * x).cos()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
            hs.push(g.dx());
        }
        assert!(slope(&hs, &errs) >= 1.9);
        // n = 256: max error below C dx^2 with C = (2 pi)^3 / 24
        assert!(errs[2] <= (2.0 * PI).powi(3) / 24.0 * hs[2] * hs[2] * 1.01);
    }

    #[test]
    fn periodic_divergence_is_second_order() {
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for n in [64usize, 128, 256, 512] {
            let g = Grid::new_1d(n, 1.0, Boundary::Periodic).unwrap();
            let flux: Vec<f64> = g.face_positions(0).iter().map(|x| (2.0 * PI * x).cos()).collect();
            let div = div_face_to_cell(&Faces::one_d(flux), &g).unwrap();
            let err = g
                .centers(0)
                .iter()
                .zip(&div)
                .map(|(x, v)| (v + 2.0 * PI * (2.0 * PI * x).sin()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
            hs.push(g.dx());
        }
        assert!(slope(&hs, &errs) >= 1.9);
    }

    #[test]
    fn constant_flux_has_zero_divergence() {
        let g = Grid::new_1d(8, 2.0, Boundary::Periodic).unwrap();
        assert!(div_face_to_cell(&Faces::one_d(vec![2.0; 8]), &g)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let g = Grid::new_1d(8, 2.0, Boundary::NoSlip).unwrap();
        assert!(div_face_to_cell(&Faces::one_d(vec![2.0; 9]), &g)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn size_mismatch_is_reported() {
        let g = Grid::new_1d(8, 1.0, Boundary::NoSlip).unwrap();
        assert!(matches!(
            grad_cell_to_face(&[0.0; 7], &g),
            Err(Error::SizeMismatch { expected: 8, got: 7 })
        ));
        assert!(matches!(
            div_face_to_cell(&Faces::one_d(vec![0.0; 8]), &g),
            Err(Error::SizeMismatch { expected: 9, got: 8 })
        ));
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    fn duality_defect(grid: &Grid, seed: u64) -> f64 {
        let psi = pseudo_random(grid.n_cells(), seed);
        let mut flux = Faces {
            x: pseudo_random(grid.n_faces(0), seed + 1),
            y: pseudo_random(grid.n_faces(1), seed + 2),
        };
        if grid.bc == Boundary::NoSlip {
            let nx = grid.cells[0];
            let fx = nx + 1;
            let ny = if grid.dim == 2 { grid.cells[1] } else { 1 };
            for j in 0..ny {
                flux.x[j * fx] = 0.0;
                flux.x[j * fx + nx] = 0.0;
            }
            if grid.dim == 2 {
                for i in 0..nx {
                    flux.y[i] = 0.0;
                    flux.y[ny * nx + i] = 0.0;
                }
            }
        }
        let div = div_face_to_cell(&flux, grid).unwrap();
        let grad = grad_cell_to_face(&psi, grid).unwrap();
        let dv = grid.cell_volume();
        let a: f64 = psi.iter().zip(&div).map(|(p, d)| p * d).sum::<f64>() * dv;
        let b: f64 = grad
            .x
            .iter()
            .zip(&flux.x)
            .chain(grad.y.iter().zip(&flux.y))
            .map(|(g, f)| g * f)
            .sum::<f64>()
            * dv;
        (a + b).abs() / (a.abs() + b.abs()).max(1.0)
    }

    #[test]
    fn summation_by_parts_duality() {
        let mut n = 8;
        while n <= 4096 {
            for bc in [Boundary::NoSlip, Boundary::Periodic] {
                let g = Grid::new_1d(n, 1.0, bc).unwrap();
                assert!(duality_defect(&g, n as u64) < 1e-12, "n = {n}, {bc:?}");
            }
            n *= 2;
        }
        for bc in [Boundary::NoSlip, Boundary::Periodic] {
            let g = Grid::new_2d([12, 9], [1.0, 0.7], bc).unwrap();
            assert!(duality_defect(&g, 7) < 1e-12);
        }
    }

    #[test]
    fn operators_are_linear() {
        for bc in [Boundary::NoSlip, Boundary::Periodic] {
            let g = Grid::new_2d([10, 7], [1.0, 1.0], bc).unwrap();
            let a = pseudo_random(g.n_cells(), 3);
            let b = pseudo_random(g.n_cells(), 4);
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - y).collect();
            let ga = grad_cell_to_face(&a, &g).unwrap();
            let gb = grad_cell_to_face(&b, &g).unwrap();
            let gs = grad_cell_to_face(&sum, &g).unwrap();
            for (k, v) in gs.x.iter().enumerate() {
                assert!((v - (2.0 * ga.x[k] - gb.x[k])).abs() < 1e-12 * (1.0 + v.abs()));
            }
            let da = div_face_to_cell(&ga, &g).unwrap();
            let db = div_face_to_cell(&gb, &g).unwrap();
            let ds = div_face_to_cell(&gs, &g).unwrap();
            for (k, v) in ds.iter().enumerate() {
                assert!((v - (2.0 * da[k] - db[k])).abs() < 1e-12 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn upwind_flux_examples() {
        let g = Grid::new_1d(4, 1.0, Boundary::Periodic).unwrap();
        let rho = [1.0, 2.0, 3.0, 4.0];
        let u = Faces::one_d(vec![0.5, 1.0, 2.0, 0.0]);
        let f = upwind_mass_flux(&rho, &u, &g).unwrap();
        assert_eq!(f.x, vec![0.5 * 4.0, 1.0 * 1.0, 2.0 * 2.0, 0.0]);

        let u = Faces::one_d(vec![-1.0, 0.5, -2.0, 3.0]);
        let f = upwind_mass_flux(&[2.0; 4], &u, &g).unwrap();
        assert_eq!(f.x, vec![-2.0, 1.0, -4.0, 6.0]);

        let g = Grid::new_1d(3, 1.0, Boundary::NoSlip).unwrap();
        let u = Faces::one_d(vec![5.0, -1.0, 1.0, 5.0]);
        let f = upwind_mass_flux(&[1.0, 2.0, 3.0], &u, &g).unwrap();
        assert_eq!(f.x, vec![0.0, -2.0, 2.0, 0.0]);
    }

    #[test]
    fn upwind_continuity_conserves_mass() {
        let n = 128;
        let g = Grid::new_1d(n, 1.0, Boundary::Periodic).unwrap();
        let mut rho: Vec<f64> = g.centers(0).iter().map(|x| 1.0 + 0.5 * (2.0 * PI * x).sin()).collect();
        let u = Faces::one_d(g.face_positions(0).iter().map(|x| (2.0 * PI * x).cos()).collect());
        let m0: f64 = rho.iter().sum::<f64>() * g.dx();
        for _ in 0..100 {
            let flux = upwind_mass_flux(&rho, &u, &g).unwrap();
            let div = div_face_to_cell(&flux, &g).unwrap();
            let before: f64 = rho.iter().sum::<f64>() * g.dx();
            for (r, d) in rho.iter_mut().zip(&div) {
                *r -= 1e-3 * d;
            }
            let after: f64 = rho.iter().sum::<f64>() * g.dx();
            assert!((after - before).abs() <= 1e-13 * m0);
        }
    }

    #[test]
    fn stress_examples() {
        let s = viscous_stress(&[[0.0; 1]; 1], 1.0, 0.0).unwrap();
        assert_eq!(s, [[0.0]]);
        let s = viscous_stress(&[[3.0]], 1.0, 0.0).unwrap();
        assert!((s[0][0] - 4.0).abs() < 1e-14);
        let s = viscous_stress(&[[0.0, 2.0], [-2.0, 0.0]], 1.3, 0.4).unwrap();
        assert_eq!(s, [[0.0; 2]; 2]);
        assert!(matches!(viscous_stress(&[[1.0]], 0.0, 0.0), Err(Error::Config(_))));
        assert!(matches!(viscous_stress(&[[1.0]], -1.0, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn stress_is_symmetric_with_expected_trace() {
        let g = [[0.3, -1.2], [0.7, 2.1]];
        let (mu, eta) = (0.8, 0.25);
        let s = viscous_stress(&g, mu, eta).unwrap();
        assert!((s[0][1] - s[1][0]).abs() < 1e-14);
        let tr_g = g[0][0] + g[1][1];
        let expected = (2.0 - 2.0 * 2.0 / 3.0) * mu * tr_g + 2.0 * eta * tr_g;
        assert!((s[0][0] + s[1][1] - expected).abs() < 1e-13);
        let s1 = viscous_stress(&[[1.7]], mu, eta).unwrap();
        assert!((s1[0][0] - ((2.0 - 2.0 / 3.0) * mu * 1.7 + eta * 1.7)).abs() < 1e-13);
    }

    #[test]
    fn dissipation_examples() {
        assert_eq!(dissipation_density(&[[0.0; 2]; 2], 1.0, 0.5).unwrap(), (0.0, 0.0));
        let (mu, eta, ux) = (0.7, 0.2, 1.9);
        let (a, b) = dissipation_density(&[[ux]], mu, eta).unwrap();
        let expected = (4.0 / 3.0 * mu + eta) * ux * ux;
        assert!((a - expected).abs() < 1e-13);
        assert!((b - expected).abs() < 1e-13);
    }

    /// u = (sin(pi x)^2 sin(2 pi y), -sin(2 pi x) sin(pi y)^2 / 2 + x y (1-x)(1-y)):
    /// both components vanish on the boundary of the unit square.
    fn manufactured_gradient(x: f64, y: f64) -> Tensor<2> {
        let (sx, cx) = ((PI * x).sin(), (PI * x).cos());
        let (sy, cy) = ((PI * y).sin(), (PI * y).cos());
        let u_x = 2.0 * PI * sx * cx * (2.0 * PI * y).sin();
        let u_y = sx * sx * 2.0 * PI * (2.0 * PI * y).cos();
        let v_x = -PI * (2.0 * PI * x).cos() * sy * sy + y * (1.0 - y) * (1.0 - 2.0 * x);
        let v_y = -0.5 * (2.0 * PI * x).sin() * 2.0 * PI * sy * cy + x * (1.0 - x) * (1.0 - 2.0 * y);
        [[u_x, u_y], [v_x, v_y]]
    }

    #[test]
    fn integrated_dissipation_forms_agree_under_noslip() {
        let (mu, eta) = (0.6, 0.3);
        let mut gaps = Vec::new();
        let mut hs = Vec::new();
        for n in [16usize, 32, 64, 128] {
            let grid = Grid::new_2d([n, n], [1.0, 1.0], Boundary::NoSlip).unwrap();
            let xs = grid.centers(0);
            let ys = grid.centers(1);
            let grads: Vec<Tensor<2>> = ys
                .iter()
                .flat_map(|y| xs.iter().map(move |x| manufactured_gradient(*x, *y)))
                .collect();
            let (a, b) = dissipation_density_field(&grads, mu, eta).unwrap();
            let dv = grid.cell_volume();
            let ia: f64 = a.iter().sum::<f64>() * dv;
            let ib: f64 = b.iter().sum::<f64>() * dv;
            gaps.push((ia - ib).abs());
            hs.push(grid.dx());
        }
        let converged = gaps.iter().all(|g| *g < 1e-12);
        assert!(converged || slope(&hs, &gaps) >= 1.9, "{gaps:?}");
    }
}
