//! Box and Favre filtering with integer-factor downsampling, and the
//! subgrid-scale stress lost by that coarse-graining.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{gradient, Axis, FlowState, GridSpec, ScalarField3D};

/// Filter width in fine voxels per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    factor: usize,
}

impl FilterSpec {
    pub const ALLOWED: [usize; 5] = [2, 4, 8, 16, 32];

    pub fn new(factor: usize) -> Result<Self> {
        if Self::ALLOWED.contains(&factor) {
            Ok(Self { factor })
        } else {
            Err(Error::InvalidFactor(factor))
        }
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// The coarse grid produced from `fine`.
    pub fn coarse_grid(&self, fine: &GridSpec) -> Result<GridSpec> {
        let f = self.factor;
        for extent in fine.dims() {
            if extent % f != 0 {
                return Err(Error::NotDivisible { factor: f, extent });
            }
        }
        GridSpec::new(fine.nx / f, fine.ny / f, fine.nz / f, fine.dx * f as f64)
    }
}

/// Maps every fine voxel (in flat order) to its coarse block.
fn block_index(fine: &GridSpec, coarse: &GridSpec, factor: usize) -> impl Iterator<Item = usize> {
    let (nx, ny, nz) = (fine.nx, fine.ny, fine.nz);
    let (cy, cz) = (coarse.ny, coarse.nz);
    (0..nx).flat_map(move |x| {
        (0..ny).flat_map(move |y| {
            let row = ((x / factor) * cy + y / factor) * cz;
            (0..nz).map(move |z| row + z / factor)
        })
    })
}

/// Block means of `values`, accumulated in fine flat order.
fn block_mean(values: impl Iterator<Item = f64>, fine: &GridSpec, coarse: &GridSpec, factor: usize) -> Vec<f64> {
    let mut sums = vec![0.0; coarse.len()];
    for (c, v) in block_index(fine, coarse, factor).zip(values) {
        sums[c] += v;
    }
    let inv = 1.0 / (factor * factor * factor) as f64;
    sums.iter_mut().for_each(|s| *s *= inv);
    sums
}

/// Uniform (box) filter and downsample: each coarse voxel is the mean of its block.
pub fn box_filter(f: &ScalarField3D, spec: FilterSpec) -> Result<ScalarField3D> {
    let coarse = spec.coarse_grid(f.grid())?;
    let values = block_mean(f.values().iter().copied(), f.grid(), &coarse, spec.factor);
    Ok(ScalarField3D::from_parts_unchecked(coarse, values, f.unit().to_string()))
}

/// Density-weighted filter: `rho_bar = box(rho)`, `u_tilde = box(rho u) / rho_bar`.
pub fn favre_filter(state: &FlowState, spec: FilterSpec) -> Result<FlowState> {
    let fine = state.grid();
    let coarse = spec.coarse_grid(fine)?;
    let f = spec.factor;
    let rho = state.rho.values();
    let rho_bar = block_mean(rho.iter().copied(), fine, &coarse, f);
    let u = [0, 1, 2].map(|k| {
        let weighted = rho.iter().zip(state.u[k].values()).map(|(r, v)| r * v);
        let mut m = block_mean(weighted, fine, &coarse, f);
        m.iter_mut().zip(&rho_bar).for_each(|(m, r)| *m /= r);
        ScalarField3D::from_parts_unchecked(coarse, m, state.u[k].unit().to_string())
    });
    FlowState::new(
        ScalarField3D::from_parts_unchecked(coarse, rho_bar, state.rho.unit().to_string()),
        u,
    )
}

/// Symmetric subgrid-scale stress on the coarse grid, kg m^-1 s^-2.
#[derive(Debug, Clone, PartialEq)]
pub struct SgsTensorField {
    /// `[t11, t22, t33, t12, t13, t23]`.
    pub components: [ScalarField3D; 6],
}

impl SgsTensorField {
    const SLOT: [[usize; 3]; 3] = [[0, 3, 4], [3, 1, 5], [4, 5, 2]];

    /// Component `tau_ij`, zero-based indices.
    pub fn get(&self, i: usize, j: usize) -> &ScalarField3D {
        &self.components[Self::SLOT[i][j]]
    }

    pub fn grid(&self) -> &GridSpec {
        self.components[0].grid()
    }

    /// `(div tau)_k = sum_j d tau_kj / dx_j` on the coarse grid.
    pub fn divergence(&self) -> Result<[ScalarField3D; 3]> {
        let grid = *self.grid();
        if grid.dims().iter().any(|&n| n < 3) {
            return Err(Error::DomainTooSmall(format!(
                "coarse grid {}x{}x{} needs at least 3 voxels per axis",
                grid.nx, grid.ny, grid.nz
            )));
        }
        let mut out = Vec::with_capacity(3);
        for k in 0..3 {
            let mut acc = vec![0.0; grid.len()];
            for (j, axis) in Axis::ALL.into_iter().enumerate() {
                let d = gradient(self.get(k, j), axis)?;
                acc.iter_mut().zip(d.values()).for_each(|(a, v)| *a += v);
            }
            out.push(ScalarField3D::from_parts_unchecked(grid, acc, "kgm-2s-2".into()));
        }
        Ok(out.try_into().expect("three components"))
    }
}

/// `tau_ij = rho_bar (Favre(u_i u_j) - u_tilde_i u_tilde_j)`.
///
/// Evaluated in the centered form `box(rho (u_i - u_tilde_i)(u_j - u_tilde_j))`,
/// which is algebraically identical and keeps the diagonal nonnegative.
pub fn sgs_stress(fine: &FlowState, spec: FilterSpec) -> Result<SgsTensorField> {
    let filtered = favre_filter(fine, spec)?;
    let fgrid = fine.grid();
    let coarse = *filtered.grid();
    let f = spec.factor;
    let rho = fine.rho.values();
    let ut = [0, 1, 2].map(|k| filtered.u[k].values());
    let uf = [0, 1, 2].map(|k| fine.u[k].values());

    const PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
    let mut sums = [0; 6].map(|_| vec![0.0; coarse.len()]);
    for (i, c) in block_index(fgrid, &coarse, f).enumerate() {
        let d = [uf[0][i] - ut[0][c], uf[1][i] - ut[1][c], uf[2][i] - ut[2][c]];
        for (slot, &(a, b)) in PAIRS.iter().enumerate() {
            sums[slot][c] += rho[i] * d[a] * d[b];
        }
    }
    let inv = 1.0 / (f * f * f) as f64;
    let components = sums.map(|mut s| {
        s.iter_mut().for_each(|v| *v *= inv);
        ScalarField3D::from_parts_unchecked(coarse, s, "kgm-1s-2".into())
    });
    Ok(SgsTensorField { components })
}

/// Divergence of the subgrid-scale stress at coarse spacing `factor * dx`.
pub fn sgs_divergence(fine: &FlowState, spec: FilterSpec) -> Result<[ScalarField3D; 3]> {
    let coarse = spec.coarse_grid(fine.grid())?;
    if coarse.dims().iter().any(|&n| n < 3) {
        return Err(Error::DomainTooSmall(format!(
            "coarse grid {}x{}x{} needs at least 3 voxels per axis",
            coarse.nx, coarse.ny, coarse.nz
        )));
    }
    sgs_stress(fine, spec)?.divergence()
}

/// Nearest-neighbor upsampling: each coarse voxel fills a `factor^3` block.
pub fn replicate_blocks(f: &ScalarField3D, factor: usize) -> Result<ScalarField3D> {
    if factor == 0 {
        return Err(Error::InvalidFactor(factor));
    }
    let g = f.grid();
    let fine = GridSpec::new(g.nx * factor, g.ny * factor, g.nz * factor, g.dx / factor as f64)?;
    let values = block_index(&fine, g, factor).map(|c| f.values()[c]).collect();
    Ok(ScalarField3D::from_parts_unchecked(fine, values, f.unit().to_string()))
}

pub fn replicate_state(state: &FlowState, factor: usize) -> Result<FlowState> {
    FlowState::with_channels(
        replicate_blocks(&state.rho, factor)?,
        [
            replicate_blocks(&state.u[0], factor)?,
            replicate_blocks(&state.u[1], factor)?,
            replicate_blocks(&state.u[2], factor)?,
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(n: usize) -> GridSpec {
        GridSpec::cube(n, 1.0).unwrap()
    }

    #[test]
    fn filter_spec_validation() {
        assert!(FilterSpec::new(3).is_err());
        assert!(FilterSpec::new(64).is_err());
        let s = FilterSpec::new(4).unwrap();
        assert!(matches!(
            s.coarse_grid(&GridSpec::new(8, 8, 6, 1.0).unwrap()),
            Err(Error::NotDivisible { factor: 4, extent: 6 })
        ));
        let c = s.coarse_grid(&GridSpec::new(8, 16, 4, 0.5).unwrap()).unwrap();
        assert_eq!(c.dims(), [2, 4, 1]);
        assert_eq!(c.dx, 2.0);
    }

    #[test]
    fn box_filter_of_index_block() {
        let g = cube(2);
        let f = ScalarField3D::new(g, (0..8).map(|v| v as f64).collect(), "").unwrap();
        let c = box_filter(&f, FilterSpec::new(2).unwrap()).unwrap();
        assert_eq!(c.values(), &[3.5]);
    }

    #[test]
    fn box_filter_of_constant() {
        let f = ScalarField3D::constant(cube(8), 1.25, "");
        let c = box_filter(&f, FilterSpec::new(4).unwrap()).unwrap();
        assert!(c.values().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn favre_weighted_block() {
        let g = cube(2);
        let rho: Vec<f64> = vec![1.0, 1.0, 1.0, 1.0, 3.0, 3.0, 3.0, 3.0];
        let r = ScalarField3D::new(g, rho.clone(), "").unwrap();
        let u = ScalarField3D::new(g, rho, "").unwrap();
        let z = ScalarField3D::constant(g, 0.0, "");
        let s = FlowState::new(r, [u, z.clone(), z]).unwrap();
        let c = favre_filter(&s, FilterSpec::new(2).unwrap()).unwrap();
        assert_eq!(c.rho.values(), &[2.0]);
        assert_eq!(c.u[0].values(), &[2.5]);
    }

    #[test]
    fn sgs_of_two_point_pattern() {
        let g = cube(2);
        let pattern = ScalarField3D::from_fn(g, "", |x, _, _| if x == 0 { -1.0 } else { 1.0 });
        let z = ScalarField3D::constant(g, 0.0, "");
        let s = FlowState::new(ScalarField3D::constant(g, 1.0, ""), [pattern, z.clone(), z]).unwrap();
        let tau = sgs_stress(&s, FilterSpec::new(2).unwrap()).unwrap();
        assert_eq!(tau.get(0, 0).values(), &[1.0]);
        for (i, j) in [(1, 1), (2, 2), (0, 1), (0, 2), (1, 2)] {
            assert_eq!(tau.get(i, j).values(), &[0.0]);
            assert_eq!(tau.get(j, i).values(), &[0.0]);
        }
    }

    #[test]
    fn sgs_divergence_needs_three_coarse_voxels() {
        let g = cube(8);
        let c = ScalarField3D::constant(g, 1.0, "");
        let s = FlowState::new(c.clone(), [c.clone(), c.clone(), c]).unwrap();
        assert!(matches!(
            sgs_divergence(&s, FilterSpec::new(4).unwrap()),
            Err(Error::DomainTooSmall(_))
        ));
        let d = sgs_divergence(&s, FilterSpec::new(2).unwrap()).unwrap();
        assert!(d.iter().all(|f| f.values().iter().all(|&v| v.abs() < 1e-14)));
    }

    #[test]
    fn replicate_then_box_filter_is_identity() {
        let g = cube(3);
        let f = ScalarField3D::from_fn(g, "", |x, y, z| (x * 9 + y * 3 + z) as f64 * 0.25);
        let up = replicate_blocks(&f, 2).unwrap();
        assert_eq!(up.grid().dims(), [6, 6, 6]);
        assert_eq!(up.get(5, 0, 3), f.get(2, 0, 1));
        let back = box_filter(&up, FilterSpec::new(2).unwrap()).unwrap();
        assert_eq!(back.values(), f.values());
    }
}
