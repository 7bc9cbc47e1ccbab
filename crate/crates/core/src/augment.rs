//! Flips and rotations that map the lattice onto itself and keep the
//! momentum divergence a scalar field, so augmented samples still satisfy
//! continuity.
//!
//! An element is a signed axis permutation `M` with `M[k][perm[k]] = signs[k]`.
//! Acting on a state, the voxel at centered coordinate `x` moves to `M x`, the
//! density is carried along, and the velocity is rotated with it:
//! `u'(M x) = M u(x)`, i.e. output component `k` is `signs[k] * u[perm[k]]`.
//!
//! The 48 elements, listed by [`CubeSymmetry::all`], are the 6 permutations in
//! lexicographic order, each with the 8 sign patterns `(+,+,+), (+,+,-), ...,
//! (-,-,-)`. For example:
//!
//! | element | matrix rows |
//! |---|---|
//! | identity | `(1,0,0) (0,1,0) (0,0,1)` |
//! | flip x | `(-1,0,0) (0,1,0) (0,0,1)` |
//! | 90 deg about z, x -> y | `(0,-1,0) (1,0,0) (0,0,1)` |
//! | point reflection | `(-1,0,0) (0,-1,0) (0,0,-1)` |
//!
//! [`CubeSymmetry::matrix`] gives the matrix of any element.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{divergence, FlowState, GridSpec, ScalarField3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CubeSymmetry {
    perm: [usize; 3],
    signs: [i8; 3],
}

const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

impl CubeSymmetry {
    pub const IDENTITY: CubeSymmetry = CubeSymmetry {
        perm: [0, 1, 2],
        signs: [1, 1, 1],
    };

    pub fn new(perm: [usize; 3], signs: [i8; 3]) -> Result<Self> {
        if !PERMUTATIONS.contains(&perm) {
            return Err(Error::InvalidArgument(format!("{perm:?} is not an axis permutation")));
        }
        if signs.iter().any(|s| s.abs() != 1) {
            return Err(Error::InvalidArgument(format!("signs {signs:?} must be +-1")));
        }
        Ok(Self { perm, signs })
    }

    /// All 48 elements in a fixed order.
    pub fn all() -> Vec<CubeSymmetry> {
        PERMUTATIONS
            .iter()
            .flat_map(|&perm| {
                (0..8u8).map(move |bits| CubeSymmetry {
                    perm,
                    signs: [2, 1, 0].map(|b| if bits >> b & 1 == 1 { -1 } else { 1 }),
                })
            })
            .collect()
    }

    /// The 24 proper rotations (determinant +1).
    pub fn rotations() -> Vec<CubeSymmetry> {
        Self::all().into_iter().filter(|g| g.is_rotation()).collect()
    }

    pub fn perm(&self) -> [usize; 3] {
        self.perm
    }

    pub fn signs(&self) -> [i8; 3] {
        self.signs
    }

    /// Position in [`CubeSymmetry::all`].
    pub fn index(&self) -> usize {
        let p = PERMUTATIONS.iter().position(|&p| p == self.perm).unwrap();
        let bits = self
            .signs
            .iter()
            .fold(0, |acc, &s| (acc << 1) | usize::from(s < 0));
        p * 8 + bits
    }

    pub fn matrix(&self) -> [[i32; 3]; 3] {
        let mut m = [[0; 3]; 3];
        for k in 0..3 {
            m[k][self.perm[k]] = self.signs[k] as i32;
        }
        m
    }

    fn from_matrix(m: [[i32; 3]; 3]) -> Self {
        let mut perm = [0; 3];
        let mut signs = [1; 3];
        for k in 0..3 {
            let j = (0..3).find(|&j| m[k][j] != 0).expect("signed permutation matrix");
            perm[k] = j;
            signs[k] = m[k][j] as i8;
        }
        Self { perm, signs }
    }

    pub fn determinant(&self) -> i32 {
        let m = self.matrix();
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn is_rotation(&self) -> bool {
        self.determinant() == 1
    }

    pub fn permutes_axes(&self) -> bool {
        self.perm != [0, 1, 2]
    }

    /// `self` followed by `then`: the matrix product `then * self`.
    pub fn then(&self, then: &CubeSymmetry) -> CubeSymmetry {
        let (a, b) = (then.matrix(), self.matrix());
        let mut m = [[0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        Self::from_matrix(m)
    }

    pub fn inverse(&self) -> CubeSymmetry {
        let m = self.matrix();
        let mut t = [[0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                t[i][j] = m[j][i];
            }
        }
        Self::from_matrix(t)
    }

    fn output_grid(&self, g: &GridSpec) -> Result<GridSpec> {
        if self.permutes_axes() && !g.is_cubic() {
            return Err(Error::NonCubic(g.nx, g.ny, g.nz));
        }
        Ok(*g)
    }

    /// Source flat index for every output voxel, in output order.
    fn gather_indices(&self, g: &GridSpec) -> Vec<usize> {
        let dims = g.dims();
        let strides = g.strides();
        let mut out = Vec::with_capacity(g.len());
        for j0 in 0..dims[0] {
            for j1 in 0..dims[1] {
                for j2 in 0..dims[2] {
                    let j = [j0, j1, j2];
                    let mut src = 0;
                    for ((&jk, &a), &sign) in j.iter().zip(&self.perm).zip(&self.signs) {
                        let i = if sign > 0 { jk } else { dims[a] - 1 - jk };
                        src += i * strides[a];
                    }
                    out.push(src);
                }
            }
        }
        out
    }
}

/// Moves a scalar field with the lattice (no sign change).
pub fn apply_scalar(f: &ScalarField3D, g: &CubeSymmetry) -> Result<ScalarField3D> {
    let grid = g.output_grid(f.grid())?;
    let values = g.gather_indices(&grid).iter().map(|&i| f.values()[i]).collect();
    Ok(ScalarField3D::from_parts_unchecked(grid, values, f.unit().to_string()))
}

pub fn apply(state: &FlowState, g: &CubeSymmetry) -> Result<FlowState> {
    let grid = g.output_grid(state.grid())?;
    let src = g.gather_indices(&grid);
    let gather = |f: &ScalarField3D, sign: f64| {
        let v = f.values();
        let values = src.iter().map(|&i| sign * v[i]).collect();
        ScalarField3D::from_parts_unchecked(grid, values, f.unit().to_string())
    };
    let u = [0, 1, 2].map(|k| gather(&state.u[g.perm[k]], g.signs[k] as f64));
    FlowState::with_channels(gather(&state.rho, 1.0), u)
}

/// Element drawn uniformly from the 48 (or, with `rotations_only`, the 24 proper rotations).
pub fn random_symmetry(seed: u64, rotations_only: bool) -> CubeSymmetry {
    sample_symmetry(&mut ChaCha8Rng::seed_from_u64(seed), rotations_only)
}

pub fn sample_symmetry<R: Rng + ?Sized>(rng: &mut R, rotations_only: bool) -> CubeSymmetry {
    let pool = if rotations_only {
        CubeSymmetry::rotations()
    } else {
        CubeSymmetry::all()
    };
    pool[rng.gen_range(0..pool.len())]
}

fn momentum_divergence(state: &FlowState) -> Result<ScalarField3D> {
    divergence(&state.momentum(0), &state.momentum(1), &state.momentum(2))
}

/// Max |div(rho u) moved by `g` - div(rho u) of the moved state| over interior voxels.
pub fn verify_continuity(state: &FlowState, g: &CubeSymmetry) -> Result<f64> {
    let expected = apply_scalar(&momentum_divergence(state)?, g)?;
    let actual = momentum_divergence(&apply(state, g)?)?;
    let grid = *actual.grid();
    let mut max = 0.0f64;
    for x in 1..grid.nx - 1 {
        for y in 1..grid.ny - 1 {
            for z in 1..grid.nz - 1 {
                max = max.max((actual.get(x, y, z) - expected.get(x, y, z)).abs());
            }
        }
    }
    Ok(max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_state(g: GridSpec) -> FlowState {
        let f = |s: usize| move |x: usize, y: usize, z: usize| ((x * 31 + y * 7 + z * 3 + s) % 11) as f64 - 4.0;
        FlowState::new(
            ScalarField3D::from_fn(g, "", |x, y, z| 1.0 + (x + 2 * y + 3 * z) as f64 * 0.01),
            [ScalarField3D::from_fn(g, "", f(0)), ScalarField3D::from_fn(g, "", f(1)), ScalarField3D::from_fn(g, "", f(2))],
        )
        .unwrap()
    }

    #[test]
    fn there_are_48_distinct_elements() {
        let all = CubeSymmetry::all();
        assert_eq!(all.len(), 48);
        let set: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(set.len(), 48);
        assert_eq!(all[0], CubeSymmetry::IDENTITY);
        assert_eq!(CubeSymmetry::rotations().len(), 24);
        for (i, g) in all.iter().enumerate() {
            assert_eq!(g.index(), i);
        }
    }

    #[test]
    fn identity_is_bit_exact() {
        let s = ramp_state(GridSpec::new(4, 5, 6, 1.0).unwrap());
        assert_eq!(apply(&s, &CubeSymmetry::IDENTITY).unwrap(), s);
    }

    #[test]
    fn flip_x_negates_only_u1() {
        let g = GridSpec::new(4, 3, 5, 1.0).unwrap();
        let s = ramp_state(g);
        let flip = CubeSymmetry::new([0, 1, 2], [-1, 1, 1]).unwrap();
        let t = apply(&s, &flip).unwrap();
        for x in 0..4 {
            for y in 0..3 {
                for z in 0..5 {
                    assert_eq!(t.rho.get(x, y, z), s.rho.get(3 - x, y, z));
                    assert_eq!(t.u[0].get(x, y, z), -s.u[0].get(3 - x, y, z));
                    assert_eq!(t.u[1].get(x, y, z), s.u[1].get(3 - x, y, z));
                    assert_eq!(t.u[2].get(x, y, z), s.u[2].get(3 - x, y, z));
                }
            }
        }
    }

    #[test]
    fn quarter_turn_about_z() {
        // x -> y: u1' = -u2, u2' = u1 at the rotated voxel.
        let rot = CubeSymmetry::new([1, 0, 2], [-1, 1, 1]).unwrap();
        assert_eq!(rot.matrix(), [[0, -1, 0], [1, 0, 0], [0, 0, 1]]);
        assert!(rot.is_rotation());
        let s = ramp_state(GridSpec::cube(5, 1.0).unwrap());
        let t = apply(&s, &rot).unwrap();
        for x in 0..5 {
            for y in 0..5 {
                assert_eq!(t.u[0].get(x, y, 2), -s.u[1].get(y, 4 - x, 2));
                assert_eq!(t.u[1].get(x, y, 2), s.u[0].get(y, 4 - x, 2));
            }
        }
        assert!(verify_continuity(&s, &rot).unwrap() < 1e-10);
    }

    #[test]
    fn permutation_needs_cubic_domain() {
        let s = ramp_state(GridSpec::new(4, 4, 5, 1.0).unwrap());
        let swap = CubeSymmetry::new([1, 0, 2], [1, 1, 1]).unwrap();
        assert!(matches!(apply(&s, &swap), Err(Error::NonCubic(4, 4, 5))));
        let flip = CubeSymmetry::new([0, 1, 2], [1, -1, -1]).unwrap();
        assert!(apply(&s, &flip).is_ok());
    }

    #[test]
    fn wrong_sign_is_detected() {
        let s = ramp_state(GridSpec::cube(6, 1.0).unwrap());
        let g = CubeSymmetry::new([0, 1, 2], [-1, 1, 1]).unwrap();
        assert!(verify_continuity(&s, &g).unwrap() < 1e-10);
        // Mutant: flip indices along x without negating u1.
        let mut t = apply(&s, &g).unwrap();
        t.u[0] = t.u[0].map(|v| -v);
        let expected = apply_scalar(&momentum_divergence(&s).unwrap(), &g).unwrap();
        let actual = momentum_divergence(&t).unwrap();
        let dev = actual
            .values()
            .iter()
            .zip(expected.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev > 0.1, "mutant deviation {dev}");
    }

    #[test]
    fn random_symmetry_is_seeded() {
        assert_eq!(random_symmetry(7, false), random_symmetry(7, false));
        let draws: Vec<_> = (0..20).map(|s| random_symmetry(s, false)).collect();
        assert!(draws.iter().any(|g| *g != draws[0]));
        assert!((0..100).all(|s| random_symmetry(s, true).is_rotation()));
    }
}
