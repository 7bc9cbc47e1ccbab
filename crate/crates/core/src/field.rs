//! Volumetric lattice types, finite-difference stencils and channel normalization.
//!
//! All fields use one layout: row-major with z fastest, so the flat index of
//! voxel `(x, y, z)` is `x * ny * nz + y * nz + z`. Values are held as `f64`;
//! storage on disk is `f32` (see [`crate::io`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform lattice geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Voxel spacing in meters, identical on all axes.
    pub dx: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, nz: usize, dx: f64) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidGrid(format!(
                "extents must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {dx}")));
        }
        nx.checked_mul(ny)
            .and_then(|n| n.checked_mul(nz))
            .filter(|&n| n <= isize::MAX as usize / std::mem::size_of::<f64>())
            .ok_or_else(|| Error::InvalidGrid(format!("{nx}x{ny}x{nz} is not addressable")))?;
        Ok(Self { nx, ny, nz, dx })
    }

    pub fn cube(n: usize, dx: f64) -> Result<Self> {
        Self::new(n, n, n, dx)
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_cubic(&self) -> bool {
        self.nx == self.ny && self.ny == self.nz
    }

    /// Flat-index stride of each axis.
    pub fn strides(&self) -> [usize; 3] {
        [self.ny * self.nz, self.nz, 1]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.ny + y) * self.nz + z
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let z = index % self.nz;
        let y = (index / self.nz) % self.ny;
        let x = index / (self.ny * self.nz);
        [x, y, z]
    }

    /// Same extents, ignoring spacing.
    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.dims() == other.dims()
    }

    pub fn matches(&self, other: &GridSpec) -> bool {
        self.same_shape(other) && self.dx == other.dx
    }
}

/// One of the three lattice axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    /// Zero-based position of the axis.
    pub fn position(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl TryFrom<usize> for Axis {
    type Error = Error;

    /// One-based axis number, `1 => X`.
    fn try_from(axis: usize) -> Result<Self> {
        match axis {
            1 => Ok(Axis::X),
            2 => Ok(Axis::Y),
            3 => Ok(Axis::Z),
            other => Err(Error::AxisOutOfRange(other)),
        }
    }
}

/// A real-valued scalar channel on a uniform lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField3D {
    grid: GridSpec,
    values: Vec<f64>,
    unit: String,
}

impl ScalarField3D {
    /// Wraps `values`; rejects length mismatch and non-finite entries.
    pub fn new(grid: GridSpec, values: Vec<f64>, unit: impl Into<String>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "{} values for a {}x{}x{} grid",
                values.len(),
                grid.nx,
                grid.ny,
                grid.nz
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index,
                context: String::new(),
            });
        }
        Ok(Self {
            grid,
            values,
            unit: unit.into(),
        })
    }

    pub fn constant(grid: GridSpec, value: f64, unit: impl Into<String>) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
            unit: unit.into(),
        }
    }

    /// Samples `f(x, y, z)` at integer lattice coordinates.
    pub fn from_fn<F>(grid: GridSpec, unit: impl Into<String>, f: F) -> Self
    where
        F: Fn(usize, usize, usize) -> f64,
    {
        let mut values = Vec::with_capacity(grid.len());
        for x in 0..grid.nx {
            for y in 0..grid.ny {
                for z in 0..grid.nz {
                    values.push(f(x, y, z));
                }
            }
        }
        Self {
            grid,
            values,
            unit: unit.into(),
        }
    }

    pub(crate) fn from_parts_unchecked(grid: GridSpec, values: Vec<f64>, unit: String) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values, unit }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = unit.into();
        self
    }

    /// Same values on a grid with a different spacing.
    pub fn with_spacing(mut self, dx: f64) -> Result<Self> {
        self.grid = GridSpec::new(self.grid.nx, self.grid.ny, self.grid.nz, dx)?;
        Ok(self)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.grid.index(x, y, z)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
            unit: self.unit.clone(),
        }
    }

    /// Element-wise combination of two fields on the same lattice.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        ensure_same_shape(&self.grid, &other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            unit: self.unit.clone(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Drops `layers` voxels from every face.
    pub fn trim(&self, layers: usize) -> Result<Self> {
        let [nx, ny, nz] = self.grid.dims();
        if nx <= 2 * layers || ny <= 2 * layers || nz <= 2 * layers {
            return Err(Error::DomainTooSmall(format!(
                "cannot trim {layers} layers from {nx}x{ny}x{nz}"
            )));
        }
        let grid = GridSpec::new(nx - 2 * layers, ny - 2 * layers, nz - 2 * layers, self.grid.dx)?;
        Ok(Self::from_fn(grid, self.unit.clone(), |x, y, z| {
            self.get(x + layers, y + layers, z + layers)
        }))
    }
}

pub(crate) fn ensure_same_shape(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.nx, a.ny, a.nz, b.nx, b.ny, b.nz
        )))
    }
}

/// Density and velocity on one lattice: the sample unit of the reconstruction task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub rho: ScalarField3D,
    pub u: [ScalarField3D; 3],
}

impl FlowState {
    /// Physical state: shared grid and strictly positive density.
    pub fn new(rho: ScalarField3D, u: [ScalarField3D; 3]) -> Result<Self> {
        let state = Self::with_channels(rho, u)?;
        if let Some((index, &value)) = state
            .rho
            .values()
            .iter()
            .enumerate()
            .find(|(_, &v)| v <= 0.0)
        {
            return Err(Error::NonPositiveDensity { index, value });
        }
        Ok(state)
    }

    /// Four channels on a shared grid with no sign constraint on the first,
    /// for normalized or otherwise non-physical states.
    pub fn with_channels(rho: ScalarField3D, u: [ScalarField3D; 3]) -> Result<Self> {
        for c in &u {
            if !rho.grid().matches(c.grid()) {
                return Err(Error::GridMismatch(format!(
                    "velocity channel grid {:?} differs from density grid {:?}",
                    c.grid(),
                    rho.grid()
                )));
            }
        }
        Ok(Self { rho, u })
    }

    pub fn grid(&self) -> &GridSpec {
        self.rho.grid()
    }

    /// `[rho, u1, u2, u3]`.
    pub fn channels(&self) -> [&ScalarField3D; 4] {
        [&self.rho, &self.u[0], &self.u[1], &self.u[2]]
    }

    /// Momentum component `rho * u_k`.
    pub fn momentum(&self, k: usize) -> ScalarField3D {
        let values = self
            .rho
            .values()
            .iter()
            .zip(self.u[k].values())
            .map(|(r, v)| r * v)
            .collect();
        ScalarField3D::from_parts_unchecked(*self.grid(), values, "kgm-2s-1".into())
    }

    pub fn map_channels(&self, f: impl Fn(&ScalarField3D) -> ScalarField3D) -> Result<Self> {
        Self::with_channels(
            f(&self.rho),
            [f(&self.u[0]), f(&self.u[1]), f(&self.u[2])],
        )
    }
}

/// Normalization constants; one mean/std pair shared by all velocity components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub rho_mean: f64,
    pub rho_std: f64,
    pub vel_mean: f64,
    pub vel_std: f64,
}

impl ChannelStats {
    pub const IDENTITY: ChannelStats = ChannelStats {
        rho_mean: 0.0,
        rho_std: 1.0,
        vel_mean: 0.0,
        vel_std: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (channel, value) in [("density", self.rho_std), ("velocity", self.vel_std)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::NonPositiveStd { channel, value });
            }
        }
        Ok(())
    }
}

/// Derivative along `axis`: second-order central differences in the interior,
/// first-order one-sided differences on the two boundary planes.
pub fn gradient(f: &ScalarField3D, axis: Axis) -> Result<ScalarField3D> {
    let grid = *f.grid();
    let a = axis.position();
    let n = grid.dims()[a];
    if n < 3 {
        return Err(Error::AxisTooShort {
            axis: a + 1,
            extent: n,
            needed: 3,
        });
    }
    let stride = grid.strides()[a];
    let inv_2dx = 0.5 / grid.dx;
    let inv_dx = 1.0 / grid.dx;
    let v = f.values();
    let out = (0..v.len())
        .map(|i| {
            let pos = (i / stride) % n;
            if pos == 0 {
                (v[i + stride] - v[i]) * inv_dx
            } else if pos == n - 1 {
                (v[i] - v[i - stride]) * inv_dx
            } else {
                (v[i + stride] - v[i - stride]) * inv_2dx
            }
        })
        .collect();
    let unit = if f.unit().is_empty() {
        "m-1".to_string()
    } else {
        format!("{} m-1", f.unit())
    };
    Ok(ScalarField3D::from_parts_unchecked(grid, out, unit))
}

/// `d v1/dx + d v2/dy + d v3/dz` with the [`gradient`] stencils.
pub fn divergence(
    v1: &ScalarField3D,
    v2: &ScalarField3D,
    v3: &ScalarField3D,
) -> Result<ScalarField3D> {
    ensure_same_shape(v1.grid(), v2.grid())?;
    ensure_same_shape(v1.grid(), v3.grid())?;
    let gx = gradient(v1, Axis::X)?;
    let gy = gradient(v2, Axis::Y)?;
    let gz = gradient(v3, Axis::Z)?;
    let values = gx
        .values()
        .iter()
        .zip(gy.values())
        .zip(gz.values())
        .map(|((a, b), c)| a + b + c)
        .collect();
    Ok(ScalarField3D::from_parts_unchecked(
        *v1.grid(),
        values,
        gx.unit().to_string(),
    ))
}

pub fn normalize(state: &FlowState, stats: &ChannelStats) -> Result<FlowState> {
    stats.validate()?;
    let rho = state
        .rho
        .map(|v| (v - stats.rho_mean) / stats.rho_std)
        .with_unit("");
    let vel = |c: &ScalarField3D| c.map(|v| (v - stats.vel_mean) / stats.vel_std).with_unit("");
    FlowState::with_channels(rho, [vel(&state.u[0]), vel(&state.u[1]), vel(&state.u[2])])
}

pub fn denormalize(state: &FlowState, stats: &ChannelStats) -> Result<FlowState> {
    stats.validate()?;
    let rho = state
        .rho
        .map(|v| v * stats.rho_std + stats.rho_mean)
        .with_unit("kgm-3");
    let vel = |c: &ScalarField3D| c.map(|v| v * stats.vel_std + stats.vel_mean).with_unit("ms-1");
    FlowState::with_channels(rho, [vel(&state.u[0]), vel(&state.u[1]), vel(&state.u[2])])
}

/// Population mean and standard deviation of density, and of all three
/// velocity components pooled together, over every voxel of every state.
pub fn compute_stats<'a, I>(states: I) -> Result<ChannelStats>
where
    I: IntoIterator<Item = &'a FlowState>,
{
    let states: Vec<&FlowState> = states.into_iter().collect();
    if states.is_empty() {
        return Err(Error::EmptyInput("no states to compute statistics from"));
    }
    let rho = mean_std(states.iter().map(|s| s.rho.values()));
    let vel = mean_std(states.iter().flat_map(|s| s.u.iter().map(|c| c.values())));
    Ok(ChannelStats {
        rho_mean: rho.0,
        rho_std: rho.1,
        vel_mean: vel.0,
        vel_std: vel.1,
    })
}

/// Two-pass population mean/std over concatenated slices.
fn mean_std<'a>(chunks: impl Iterator<Item = &'a [f64]> + Clone) -> (f64, f64) {
    let (sum, count) = chunks
        .clone()
        .fold((0.0, 0usize), |(s, n), c| (s + c.iter().sum::<f64>(), n + c.len()));
    let mean = sum / count as f64;
    let ss: f64 = chunks
        .map(|c| c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
        .sum();
    (mean, (ss / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nx: usize, ny: usize, nz: usize) -> GridSpec {
        GridSpec::new(nx, ny, nz, 1.0).unwrap()
    }

    fn state(g: GridSpec, rho: f64, u: [f64; 3]) -> FlowState {
        FlowState::new(
            ScalarField3D::constant(g, rho, "kgm-3"),
            u.map(|c| ScalarField3D::constant(g, c, "ms-1")),
        )
        .unwrap()
    }

    #[test]
    fn layout_is_z_fastest() {
        let g = grid(2, 3, 4);
        assert_eq!(g.index(0, 0, 1), 1);
        assert_eq!(g.index(0, 1, 0), 4);
        assert_eq!(g.index(1, 0, 0), 12);
        assert_eq!(g.coords(23), [1, 2, 3]);
    }

    #[test]
    fn grid_rejects_bad_spacing() {
        assert!(GridSpec::new(2, 2, 2, 0.0).is_err());
        assert!(GridSpec::new(2, 0, 2, 1.0).is_err());
    }

    #[test]
    fn field_rejects_nan() {
        let g = grid(2, 2, 2);
        let mut v = vec![0.0; 8];
        v[5] = f64::NAN;
        match ScalarField3D::new(g, v, "") {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gradient_of_ramp_is_exact_everywhere() {
        let g = grid(6, 3, 3);
        let f = ScalarField3D::from_fn(g, "", |x, _, _| 2.0 * x as f64);
        let d = gradient(&f, Axis::X).unwrap();
        assert!(d.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let f = ScalarField3D::constant(grid(4, 4, 4), 3.5, "");
        for axis in Axis::ALL {
            assert!(gradient(&f, axis).unwrap().values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gradient_of_square_by_hand() {
        let f = ScalarField3D::from_fn(grid(5, 2, 2), "", |x, _, _| (x * x) as f64);
        let d = gradient(&f, Axis::X).unwrap();
        let along: Vec<f64> = (0..5).map(|x| d.get(x, 1, 0)).collect();
        assert_eq!(along, vec![1.0, 2.0, 4.0, 6.0, 7.0]);
    }

    #[test]
    fn gradient_errors() {
        let f = ScalarField3D::constant(grid(5, 2, 5), 0.0, "");
        assert!(matches!(
            gradient(&f, Axis::Y),
            Err(Error::AxisTooShort { axis: 2, extent: 2, .. })
        ));
        assert!(matches!(Axis::try_from(4), Err(Error::AxisOutOfRange(4))));
        assert!(matches!(Axis::try_from(0), Err(Error::AxisOutOfRange(0))));
    }

    #[test]
    fn divergence_of_linear_fields() {
        let g = GridSpec::cube(5, 0.5).unwrap();
        let c = |i: usize| i as f64 * 0.5;
        let v1 = ScalarField3D::from_fn(g, "", |x, _, _| c(x));
        let v2 = ScalarField3D::from_fn(g, "", |_, y, _| -c(y));
        let v3 = ScalarField3D::constant(g, 0.0, "");
        let d = divergence(&v1, &v2, &v3).unwrap();
        assert!(d.values().iter().all(|&v| v.abs() < 1e-14));

        let v2 = ScalarField3D::from_fn(g, "", |_, y, _| c(y));
        let v3 = ScalarField3D::from_fn(g, "", |_, _, z| c(z));
        let d = divergence(&v1, &v2, &v3).unwrap();
        assert!(d.values().iter().all(|&v| (v - 3.0).abs() < 1e-14));
    }

    #[test]
    fn divergence_rejects_mismatch() {
        let a = ScalarField3D::constant(grid(4, 4, 4), 0.0, "");
        let b = ScalarField3D::constant(grid(4, 4, 5), 0.0, "");
        assert!(matches!(divergence(&a, &a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn normalize_examples() {
        let g = grid(3, 3, 3);
        let s = state(g, 2.0, [1.0, -1.0, 0.5]);
        let id = normalize(&s, &ChannelStats::IDENTITY).unwrap();
        assert_eq!(id.rho.values(), s.rho.values());
        assert_eq!(id.u[2].values(), s.u[2].values());

        let stats = ChannelStats {
            rho_mean: 1.0,
            rho_std: 0.5,
            vel_mean: 0.0,
            vel_std: 1.0,
        };
        let n = normalize(&s, &stats).unwrap();
        assert!(n.rho.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn normalize_rejects_zero_std() {
        let g = grid(2, 2, 2);
        let s = state(g, 1.0, [0.0; 3]);
        let stats = compute_stats([&s]).unwrap();
        assert_eq!(stats.rho_mean, 1.0);
        assert_eq!(stats.vel_mean, 0.0);
        assert!(matches!(normalize(&s, &stats), Err(Error::NonPositiveStd { .. })));
    }

    #[test]
    fn pooled_velocity_stats() {
        let s = state(grid(3, 3, 3), 1.0, [1.0, -1.0, 0.0]);
        let stats = compute_stats([&s]).unwrap();
        assert!(stats.vel_mean.abs() < 1e-15);
        assert!((stats.vel_std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn stats_of_two_states_match_concatenation() {
        let g = grid(2, 2, 3);
        let a = FlowState::new(
            ScalarField3D::from_fn(g, "", |x, y, z| 1.0 + (x + 2 * y + 3 * z) as f64),
            [0, 1, 2].map(|k| ScalarField3D::from_fn(g, "", move |x, y, z| (x * k + y) as f64 - z as f64)),
        )
        .unwrap();
        let b = state(g, 3.0, [0.5, 2.0, -4.0]);
        let stats = compute_stats([&a, &b]).unwrap();

        let rho: Vec<f64> = a.rho.values().iter().chain(b.rho.values()).copied().collect();
        let vel: Vec<f64> = a
            .u
            .iter()
            .chain(b.u.iter())
            .flat_map(|c| c.values().iter().copied())
            .collect();
        let pop = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt())
        };
        let (rm, rs) = pop(&rho);
        let (vm, vs) = pop(&vel);
        assert!((stats.rho_mean - rm).abs() < 1e-12 && (stats.rho_std - rs).abs() < 1e-12);
        assert!((stats.vel_mean - vm).abs() < 1e-12 && (stats.vel_std - vs).abs() < 1e-12);
    }

    #[test]
    fn compute_stats_rejects_empty() {
        assert!(matches!(
            compute_stats(std::iter::empty()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn flow_state_requires_positive_density() {
        let g = grid(2, 2, 2);
        let mut rho = vec![1.0; 8];
        rho[3] = 0.0;
        let r = ScalarField3D::new(g, rho, "").unwrap();
        let u = [0; 3].map(|_| ScalarField3D::constant(g, 0.0, ""));
        assert!(matches!(
            FlowState::new(r, u),
            Err(Error::NonPositiveDensity { index: 3, .. })
        ));
    }

    #[test]
    fn trim_drops_faces() {
        let f = ScalarField3D::from_fn(grid(4, 5, 6), "", |x, y, z| (100 * x + 10 * y + z) as f64);
        let t = f.trim(1).unwrap();
        assert_eq!(t.grid().dims(), [2, 3, 4]);
        assert_eq!(t.get(0, 0, 0), 111.0);
        assert!(f.trim(2).is_err());
    }
}
