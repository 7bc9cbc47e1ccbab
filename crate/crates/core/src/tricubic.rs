//! Finite-difference tricubic interpolation (Lekien & Marsden form) for
//! integer-factor upsampling, and its FLOP accounting.
//!
//! On a unit cell the interpolant is `p(x,y,z) = sum a_ijk x^i y^j z^k`,
//! `0 <= i,j,k <= 3`. Its 64 coefficients solve `A1 alpha = b`, where `b` holds
//! the values, first derivatives, mixed second derivatives and the mixed third
//! derivative at the 8 cell corners. With `b` estimated by central differences
//! over the surrounding 4x4x4 lattice stencil (`b = A2 phi / 8`, `A2` integer),
//! `8 alpha = A1^-1 A2 phi = B phi`, and `B` is an integer matrix.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FlowState, GridSpec, ScalarField3D};

pub const N: usize = 64;

/// Derivative orders `(dx, dy, dz)` making up `b`, in row-block order.
const DERIVATIVES: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 1, 0],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

#[inline]
fn corner(c: usize) -> [usize; 3] {
    [(c >> 2) & 1, (c >> 1) & 1, c & 1]
}

/// Coefficient index of `x^i y^j z^k`.
#[inline]
pub fn term_index(i: usize, j: usize, k: usize) -> usize {
    (i * 4 + j) * 4 + k
}

/// Stencil index of lattice offset `(a-1, b-1, c-1)` from the cell origin.
#[inline]
pub fn stencil_index(a: usize, b: usize, c: usize) -> usize {
    (a * 4 + b) * 4 + c
}

/// `d^order/dt^order t^power` at `t in {0, 1}`.
fn monomial_derivative(power: usize, order: usize, t: usize) -> i64 {
    match order {
        0 => (t as i64).pow(power as u32),
        _ if power == 0 => 0,
        _ => power as i64 * (t as i64).pow(power as u32 - 1),
    }
}

/// 1-D finite-difference weights, scaled by 2, at stencil positions 0..4 for
/// the node at position `node` (1 or 2).
fn stencil_weights(order: usize, node: usize) -> [i64; 4] {
    let mut w = [0; 4];
    if order == 0 {
        w[node] = 2;
    } else {
        w[node + 1] = 1;
        w[node - 1] = -1;
    }
    w
}

/// Integer matrices of the construction and the derived `B`.
#[derive(Debug, Clone)]
pub struct TricubicCoefMatrix {
    a1: Vec<i64>,
    a2: Vec<i64>,
    b: Vec<i64>,
    sparse: Vec<Vec<(usize, f64)>>,
}

impl TricubicCoefMatrix {
    /// Builds `A1`, `A2` and `B = A1^-1 A2`.
    pub fn build() -> Self {
        let mut a1 = vec![0i64; N * N];
        let mut a2 = vec![0i64; N * N];
        for (d, orders) in DERIVATIVES.iter().enumerate() {
            for c in 0..8 {
                let row = d * 8 + c;
                let at = corner(c);
                for i in 0..4 {
                    for j in 0..4 {
                        for k in 0..4 {
                            a1[row * N + term_index(i, j, k)] = monomial_derivative(i, orders[0], at[0])
                                * monomial_derivative(j, orders[1], at[1])
                                * monomial_derivative(k, orders[2], at[2]);
                        }
                    }
                }
                // Each axis contributes a factor 2 (value) or a central difference
                // with weights +-1 over spacing 2; the product times 8 is integral.
                let [wx, wy, wz] = [0, 1, 2].map(|a| stencil_weights(orders[a], at[a] + 1));
                for a in 0..4 {
                    for b in 0..4 {
                        for cc in 0..4 {
                            a2[row * N + stencil_index(a, b, cc)] = wx[a] * wy[b] * wz[cc];
                        }
                    }
                }
            }
        }

        let a1m = DMatrix::from_fn(N, N, |r, c| a1[r * N + c] as f64);
        let a2m = DMatrix::from_fn(N, N, |r, c| a2[r * N + c] as f64);
        let bm = a1m
            .lu()
            .solve(&a2m)
            .expect("tricubic constraint matrix is invertible");
        let mut b = vec![0i64; N * N];
        for r in 0..N {
            for c in 0..N {
                let v = bm[(r, c)];
                let rounded = v.round();
                assert!((v - rounded).abs() < 1e-9, "B[{r},{c}] = {v} is not integral");
                b[r * N + c] = rounded as i64;
            }
        }
        let sparse = (0..N)
            .map(|r| {
                (0..N)
                    .filter(|&c| b[r * N + c] != 0)
                    .map(|c| (c, b[r * N + c] as f64))
                    .collect()
            })
            .collect();
        Self { a1, a2, b, sparse }
    }

    pub fn a1(&self, row: usize, col: usize) -> i64 {
        self.a1[row * N + col]
    }

    pub fn a2(&self, row: usize, col: usize) -> i64 {
        self.a2[row * N + col]
    }

    /// Entry of the integer matrix `B = 8 A1^-1 A2 / 8`.
    pub fn b(&self, row: usize, col: usize) -> i64 {
        self.b[row * N + col]
    }

    pub fn zero_count(&self) -> usize {
        self.b.iter().filter(|&&v| v == 0).count()
    }

    pub fn nnz(&self) -> usize {
        N * N - self.zero_count()
    }

    pub fn a1_determinant(&self) -> f64 {
        DMatrix::from_fn(N, N, |r, c| self.a1[r * N + c] as f64).determinant()
    }

    /// Polynomial coefficients `alpha = B phi / 8`, skipping zero entries of `B`.
    pub fn coefficients(&self, stencil: &[f64; N]) -> [f64; N] {
        let mut alpha = [0.0; N];
        for (a, row) in alpha.iter_mut().zip(&self.sparse) {
            let s: f64 = row.iter().map(|&(c, w)| w * stencil[c]).sum();
            *a = s * 0.125;
        }
        alpha
    }

    /// Reference path: full 64x64 product.
    pub fn coefficients_dense(&self, stencil: &[f64; N]) -> [f64; N] {
        let mut alpha = [0.0; N];
        for (r, a) in alpha.iter_mut().enumerate() {
            let row = &self.b[r * N..(r + 1) * N];
            let s: f64 = row.iter().zip(stencil).map(|(&w, &v)| w as f64 * v).sum();
            *a = s * 0.125;
        }
        alpha
    }
}

/// Shared instance of the coefficient matrix.
pub fn coef_matrix() -> &'static TricubicCoefMatrix {
    static MATRIX: OnceLock<TricubicCoefMatrix> = OnceLock::new();
    MATRIX.get_or_init(TricubicCoefMatrix::build)
}

pub fn build_coef_matrix() -> TricubicCoefMatrix {
    TricubicCoefMatrix::build()
}

/// Evaluates `sum a_ijk x^i y^j z^k` by nested Horner steps.
#[inline]
pub fn eval_polynomial(alpha: &[f64; N], [x, y, z]: [f64; 3]) -> f64 {
    let mut p = 0.0;
    for i in (0..4).rev() {
        let mut py = 0.0;
        for j in (0..4).rev() {
            let base = term_index(i, j, 0);
            let pz = ((alpha[base + 3] * z + alpha[base + 2]) * z + alpha[base + 1]) * z + alpha[base];
            py = py * y + pz;
        }
        p = p * x + py;
    }
    p
}

fn check_unit(xyz: [f64; 3]) -> Result<()> {
    match xyz.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        Some(&t) => Err(Error::OutOfCell(t)),
        None => Ok(()),
    }
}

/// Interpolates inside the unit cell spanned by stencil nodes 1..=2 per axis.
pub fn interpolate_cell(stencil: &[f64; N], xyz: [f64; 3]) -> Result<f64> {
    check_unit(xyz)?;
    Ok(eval_polynomial(&coef_matrix().coefficients(stencil), xyz))
}

/// Same as [`interpolate_cell`] through the dense matrix product.
pub fn interpolate_cell_dense(stencil: &[f64; N], xyz: [f64; 3]) -> Result<f64> {
    check_unit(xyz)?;
    Ok(eval_polynomial(&coef_matrix().coefficients_dense(stencil), xyz))
}

/// Cell origin and local coordinate of fine voxel `i` on one axis.
///
/// Cell-centered alignment: fine center `i` sits at coarse coordinate
/// `(i + 0.5) / factor - 0.5`. Points beyond the outermost coarse centers are
/// clamped onto the boundary cells.
pub fn fine_to_cell(i: usize, factor: usize, coarse_extent: usize) -> (usize, f64) {
    let pos = (i as f64 + 0.5) / factor as f64 - 0.5;
    let cell = (pos.floor().max(0.0) as usize).min(coarse_extent - 2);
    let t = (pos - cell as f64).clamp(0.0, 1.0);
    (cell, t)
}

/// Gathers the 4x4x4 stencil around cell `(cx, cy, cz)`, replicating edge planes.
pub fn gather_stencil(field: &ScalarField3D, cell: [usize; 3]) -> [f64; N] {
    let g = field.grid();
    let dims = g.dims();
    let idx = |a: usize, axis: usize| -> usize {
        (cell[axis] + a).saturating_sub(1).min(dims[axis] - 1)
    };
    let mut s = [0.0; N];
    for a in 0..4 {
        let x = idx(a, 0);
        for b in 0..4 {
            let y = idx(b, 1);
            for c in 0..4 {
                s[stencil_index(a, b, c)] = field.get(x, y, idx(c, 2));
            }
        }
    }
    s
}

/// Upsamples by `factor` per axis.
pub fn upsample(field: &ScalarField3D, factor: usize) -> Result<ScalarField3D> {
    if factor < 2 {
        return Err(Error::InvalidFactor(factor));
    }
    let g = *field.grid();
    if let Some(&n) = g.dims().iter().find(|&&n| n < 4) {
        return Err(Error::DomainTooSmall(format!(
            "tricubic upsampling needs 4 voxels per axis, found {n}"
        )));
    }
    let fine = GridSpec::new(g.nx * factor, g.ny * factor, g.nz * factor, g.dx / factor as f64)?;
    let dims = g.dims();
    let fine_dims = fine.dims();
    // Per axis: fine indices grouped by cell, with their local coordinates.
    let groups: [Vec<Vec<(usize, f64)>>; 3] = [0, 1, 2].map(|a| {
        let mut cells = vec![Vec::new(); dims[a] - 1];
        for i in 0..fine_dims[a] {
            let (c, t) = fine_to_cell(i, factor, dims[a]);
            cells[c].push((i, t));
        }
        cells
    });
    let m = coef_matrix();
    let slab = fine.ny * fine.nz;
    let slabs: Vec<Vec<f64>> = groups[0]
        .par_iter()
        .enumerate()
        .map(|(cx, xs)| {
            let mut out = vec![0.0; xs.len() * slab];
            for (cy, ys) in groups[1].iter().enumerate() {
                for (cz, zs) in groups[2].iter().enumerate() {
                    let alpha = m.coefficients(&gather_stencil(field, [cx, cy, cz]));
                    for (lx, &(_, tx)) in xs.iter().enumerate() {
                        for &(iy, ty) in ys {
                            let row = lx * slab + iy * fine.nz;
                            for &(iz, tz) in zs {
                                out[row + iz] = eval_polynomial(&alpha, [tx, ty, tz]);
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    let values = slabs.concat();
    Ok(ScalarField3D::from_parts_unchecked(fine, values, field.unit().to_string()))
}

/// Applies [`upsample`] to each channel independently.
pub fn upsample_state(state: &FlowState, factor: usize) -> Result<FlowState> {
    FlowState::with_channels(
        upsample(&state.rho, factor)?,
        [
            upsample(&state.u[0], factor)?,
            upsample(&state.u[1], factor)?,
            upsample(&state.u[2], factor)?,
        ],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlopsMode {
    Sparse,
    Dense,
}

impl FlopsMode {
    /// Floating-point operations per output voxel and channel.
    pub fn cost_per_voxel(self) -> u64 {
        match self {
            FlopsMode::Sparse => 2738,
            FlopsMode::Dense => 8328,
        }
    }
}

/// Total tricubic cost for an output grid.
pub fn flops(grid: &GridSpec, n_channels: usize, mode: FlopsMode) -> u64 {
    mode.cost_per_voxel() * grid.len() as u64 * n_channels as u64
}
