//! Evaluation suite: 3-D SSIM, NRMSE, channel macro-averages, subgrid-stress
//! metrics, volume-averaged kinetic energy and dissipation, and shell-averaged
//! kinetic-energy spectra.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::coarsen::{sgs_divergence, FilterSpec};
use crate::error::{Error, Result};
use crate::field::{ensure_same_shape, gradient, normalize, Axis, ChannelStats, FlowState, ScalarField3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    /// Window edge length in voxels (odd).
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 9,
            c1: 0.1,
            c2: 0.3,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "SSIM window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::InvalidArgument("SSIM constants must be positive".into()));
        }
        Ok(())
    }
}

/// Sums over every length-`w` run along one axis of a `dims`-shaped array.
fn run_sums(values: &[f64], dims: [usize; 3], axis: usize, w: usize) -> (Vec<f64>, [usize; 3]) {
    let mut out_dims = dims;
    out_dims[axis] = dims[axis] - w + 1;
    let in_strides = [dims[1] * dims[2], dims[2], 1];
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for x in 0..out_dims[0] {
        for y in 0..out_dims[1] {
            for z in 0..out_dims[2] {
                let base = x * in_strides[0] + y * in_strides[1] + z;
                let s = in_strides[axis];
                out.push((0..w).map(|k| values[base + k * s]).sum());
            }
        }
    }
    (out, out_dims)
}

/// Sum over every fully-interior `w^3` window.
fn window_sums(values: &[f64], dims: [usize; 3], w: usize) -> Vec<f64> {
    let (s, d) = run_sums(values, dims, 2, w);
    let (s, d) = run_sums(&s, d, 1, w);
    run_sums(&s, d, 0, w).0
}

/// Mean SSIM over all stride-1 windows lying fully inside the domain, with
/// uniform window weights and population moments. The stabilizers enter
/// squared: `(2 mu_a mu_b + c1^2)(2 cov + c2^2) / ((mu_a^2 + mu_b^2 + c1^2)(var_a + var_b + c2^2))`.
pub fn ssim3d(a: &ScalarField3D, b: &ScalarField3D, cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    ensure_same_shape(a.grid(), b.grid())?;
    let dims = a.grid().dims();
    let w = cfg.window;
    if let Some(&n) = dims.iter().find(|&&n| n < w) {
        return Err(Error::DomainTooSmall(format!(
            "axis of {n} voxels is smaller than the {w}^3 SSIM window"
        )));
    }
    let (av, bv) = (a.values(), b.values());
    let sa = window_sums(av, dims, w);
    let sb = window_sums(bv, dims, w);
    let saa = window_sums(&av.iter().map(|v| v * v).collect::<Vec<_>>(), dims, w);
    let sbb = window_sums(&bv.iter().map(|v| v * v).collect::<Vec<_>>(), dims, w);
    let sab = window_sums(&av.iter().zip(bv).map(|(x, y)| x * y).collect::<Vec<_>>(), dims, w);

    let inv_n = 1.0 / (w * w * w) as f64;
    let c1 = cfg.c1 * cfg.c1;
    let c2 = cfg.c2 * cfg.c2;
    let total: f64 = (0..sa.len())
        .map(|i| {
            let ma = sa[i] * inv_n;
            let mb = sb[i] * inv_n;
            let va = saa[i] * inv_n - ma * ma;
            let vb = sbb[i] * inv_n - mb * mb;
            let cov = sab[i] * inv_n - ma * mb;
            ((2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1))
                * ((2.0 * cov + c2) / (va + vb + c2))
        })
        .sum();
    Ok(total / sa.len() as f64)
}

/// `sum (truth - pred)^2 / sum truth^2`, optionally square-rooted.
pub fn nrmse(pred: &ScalarField3D, truth: &ScalarField3D, sqrt: bool) -> Result<f64> {
    nrmse_batch(&[(pred, truth)], sqrt)
}

/// Ratio of squared errors to squared truth, both summed over every voxel of
/// every pair.
pub fn nrmse_batch(pairs: &[(&ScalarField3D, &ScalarField3D)], sqrt: bool) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no prediction/truth pairs"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in pairs {
        ensure_same_shape(p.grid(), t.grid())?;
        for (pv, tv) in p.values().iter().zip(t.values()) {
            num += (tv - pv) * (tv - pv);
            den += tv * tv;
        }
    }
    finish_nrmse(num, den, sqrt)
}

/// NRMSE of scalar samples, e.g. one volume average per sample.
pub fn nrmse_scalars(pred: &[f64], truth: &[f64], sqrt: bool) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no samples"));
    }
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p) * (t - p)).sum();
    let den: f64 = truth.iter().map(|t| t * t).sum();
    finish_nrmse(num, den, sqrt)
}

fn finish_nrmse(num: f64, den: f64, sqrt: bool) -> Result<f64> {
    if den == 0.0 {
        return Err(Error::ZeroTruth);
    }
    let r = num / den;
    Ok(if sqrt { r.sqrt() } else { r })
}

/// A per-channel comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Metric {
    Ssim(SsimConfig),
    Nrmse { sqrt: bool },
}

impl Metric {
    pub fn eval(&self, pred: &ScalarField3D, truth: &ScalarField3D) -> Result<f64> {
        match self {
            Metric::Ssim(cfg) => ssim3d(pred, truth, cfg),
            Metric::Nrmse { sqrt } => nrmse(pred, truth, *sqrt),
        }
    }
}

/// Mean of `metric` over paired channels.
pub fn macro_average<'a, F>(
    pairs: impl IntoIterator<Item = (&'a ScalarField3D, &'a ScalarField3D)>,
    metric: F,
) -> Result<f64>
where
    F: Fn(&ScalarField3D, &ScalarField3D) -> Result<f64>,
{
    let mut sum = 0.0;
    let mut n = 0;
    for (p, t) in pairs {
        sum += metric(p, t)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("no channels"));
    }
    Ok(sum / n as f64)
}

/// `(M(rho_hat, rho) + sum_k M(u_hat_k, u_k)) / 4` on the states as given;
/// callers normalize first (see [`evaluate_pair`]).
pub fn metric_rho_u(pred: &FlowState, truth: &FlowState, metric: &Metric) -> Result<f64> {
    ensure_same_shape(pred.grid(), truth.grid())?;
    macro_average(
        pred.channels().into_iter().zip(truth.channels()),
        |p, t| metric.eval(p, t),
    )
}

/// Subgrid-stress divergence of both states with one voxel layer stripped
/// from every face.
pub fn trimmed_sgs_divergence(state: &FlowState, spec: FilterSpec) -> Result<[ScalarField3D; 3]> {
    let [a, b, c] = sgs_divergence(state, spec)?;
    Ok([a.trim(1)?, b.trim(1)?, c.trim(1)?])
}

/// `(1/3) sum_k M((div tau_hat)_k, (div tau)_k)` on edge-trimmed coarse fields.
pub fn metric_sgs(
    pred_fine: &FlowState,
    truth_fine: &FlowState,
    spec: FilterSpec,
    metric: &Metric,
) -> Result<f64> {
    ensure_same_shape(pred_fine.grid(), truth_fine.grid())?;
    let p = trimmed_sgs_divergence(pred_fine, spec)?;
    let t = trimmed_sgs_divergence(truth_fine, spec)?;
    macro_average(p.iter().zip(t.iter()), |p, t| metric.eval(p, t))
}

/// Volume average of `rho |u|^2 / 2`, J m^-3.
pub fn kinetic_energy(state: &FlowState) -> f64 {
    let rho = state.rho.values();
    let [u, v, w] = [0, 1, 2].map(|k| state.u[k].values());
    let sum: f64 = (0..rho.len())
        .map(|i| 0.5 * rho[i] * (u[i] * u[i] + v[i] * v[i] + w[i] * w[i]))
        .sum();
    sum / rho.len() as f64
}

/// Velocity gradient tensor `G[i][j] = d u_i / d x_j`.
fn velocity_gradient(state: &FlowState) -> Result<[[ScalarField3D; 3]; 3]> {
    let row = |i: usize| -> Result<[ScalarField3D; 3]> {
        Ok([
            gradient(&state.u[i], Axis::X)?,
            gradient(&state.u[i], Axis::Y)?,
            gradient(&state.u[i], Axis::Z)?,
        ])
    };
    Ok([row(0)?, row(1)?, row(2)?])
}

/// `(tau / rho) : grad u` with unit kinematic viscosity and the deviatoric
/// Newtonian stress `grad u + grad u^T - (2/3)(div u) I`, averaged over
/// interior voxels. m^2 s^-3.
pub fn dissipation(state: &FlowState) -> Result<f64> {
    let g = *state.grid();
    if let Some((a, &n)) = g.dims().iter().enumerate().find(|(_, &n)| n < 3) {
        return Err(Error::AxisTooShort {
            axis: a + 1,
            extent: n,
            needed: 3,
        });
    }
    let grad = velocity_gradient(state)?;
    let gv = |i: usize, j: usize, idx: usize| grad[i][j].values()[idx];
    let mut sum = 0.0;
    let mut count = 0usize;
    for x in 1..g.nx - 1 {
        for y in 1..g.ny - 1 {
            for z in 1..g.nz - 1 {
                let idx = g.index(x, y, z);
                let div = gv(0, 0, idx) + gv(1, 1, idx) + gv(2, 2, idx);
                let mut e = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        let mut s = gv(i, j, idx) + gv(j, i, idx);
                        if i == j {
                            s -= 2.0 / 3.0 * div;
                        }
                        e += s * gv(i, j, idx);
                    }
                }
                sum += e;
                count += 1;
            }
        }
    }
    Ok(sum / count as f64)
}

/// Shell-averaged kinetic-energy spectrum of the velocity fluctuations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Integer shell radii in units of `2 pi / L`.
    pub wavenumbers: Vec<usize>,
    /// Energy per unit mass in each shell.
    pub energy: Vec<f64>,
}

impl Spectrum {
    pub fn total(&self) -> f64 {
        self.energy.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,E\n");
        for (k, e) in self.wavenumbers.iter().zip(&self.energy) {
            s.push_str(&format!("{k},{e:.12e}\n"));
        }
        s
    }
}

/// In-place 3-D DFT of a cubic `n^3` array (z fastest).
fn fft3d(data: &mut [Complex64], n: usize, planner: &mut FftPlanner<f64>) {
    let fft = planner.plan_fft_forward(n);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for (axis_stride, _) in [(1usize, 2), (n, 1), (n * n, 0)] {
        for base in 0..n * n * n {
            // Visit each line once, from its first element.
            if (base / axis_stride) % n != 0 {
                continue;
            }
            for (k, slot) in line.iter_mut().enumerate() {
                *slot = data[base + k * axis_stride];
            }
            fft.process(&mut line);
            for (k, v) in line.iter().enumerate() {
                data[base + k * axis_stride] = *v;
            }
        }
    }
}

/// Half the mean squared velocity fluctuation, `<|u - <u>|^2> / 2`.
pub fn fluctuation_energy(state: &FlowState) -> f64 {
    state
        .u
        .iter()
        .map(|c| {
            let m = c.mean();
            c.values().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c.values().len() as f64
        })
        .sum::<f64>()
        * 0.5
}

/// Spectrum of a cubic, periodic sample.
///
/// The per-component mean is removed, each component is transformed, and
/// `|u_hat|^2 / (2 N^2)` (`N` = voxel count) is binned by the rounded radius of
/// the signed integer wavevector, so the shells sum to [`fluctuation_energy`].
pub fn tke_spectrum(state: &FlowState) -> Result<Spectrum> {
    let g = state.grid();
    if !g.is_cubic() {
        return Err(Error::NonCubic(g.nx, g.ny, g.nz));
    }
    let n = g.nx;
    let total = g.len();
    let signed = |i: usize| if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
    let max_shell = (3.0f64.sqrt() * (n / 2) as f64).round() as usize;
    let mut energy = vec![0.0; max_shell + 1];
    let mut planner = FftPlanner::new();
    let norm = 0.5 / (total as f64 * total as f64);
    for c in &state.u {
        let m = c.mean();
        let mut data: Vec<Complex64> = c.values().iter().map(|&v| Complex64::new(v - m, 0.0)).collect();
        fft3d(&mut data, n, &mut planner);
        for (idx, v) in data.iter().enumerate() {
            let [x, y, z] = g.coords(idx);
            let r = (signed(x).powi(2) + signed(y).powi(2) + signed(z).powi(2)).sqrt();
            energy[r.round() as usize] += v.norm_sqr() * norm;
        }
    }
    Ok(Spectrum {
        wavenumbers: (0..=max_shell).collect(),
        energy,
    })
}

/// Spectrum after scaling velocity by its fluctuation RMS
/// `u' = sqrt(<|u - <u>|^2> / 3)`; lengths are already in units of the domain.
pub fn tke_spectrum_normalized(state: &FlowState) -> Result<Spectrum> {
    let urms = (2.0 * fluctuation_energy(state) / 3.0).sqrt();
    if urms == 0.0 {
        return tke_spectrum(state);
    }
    let scaled = state.map_channels(|c| c.map(|v| v / urms))?;
    tke_spectrum(&FlowState::with_channels(state.rho.clone(), scaled.u)?)
}

/// All scalar metrics of one prediction/truth pair.
///
/// Subgrid metrics are `None` when the coarse grid is too small for them
/// (fewer than 3 coarse voxels per axis, or a trimmed domain below the SSIM window).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ssim_rho_u: f64,
    pub ssim_sgs: Option<f64>,
    pub nrmse_rho_u: f64,
    pub nrmse_sgs: Option<f64>,
    pub nrmse_ek: f64,
    pub nrmse_eps: f64,
    pub ek_true: f64,
    pub ek_pred: f64,
    pub eps_true: f64,
    pub eps_pred: f64,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// Human-readable two-column table.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        let rows = [
            ("SSIM_rho,u", format!("{:.6}", self.ssim_rho_u)),
            ("SSIM_sgs", opt(self.ssim_sgs)),
            ("NRMSE_rho,u", format!("{:.6e}", self.nrmse_rho_u)),
            ("NRMSE_sgs", self.nrmse_sgs.map_or("n/a".into(), |v| format!("{v:.6e}"))),
            ("NRMSE_Ek", format!("{:.6e}", self.nrmse_ek)),
            ("NRMSE_eps", format!("{:.6e}", self.nrmse_eps)),
            ("Ek_true [J/m3]", format!("{:.6e}", self.ek_true)),
            ("Ek_pred [J/m3]", format!("{:.6e}", self.ek_pred)),
            ("eps_true [m2/s3]", format!("{:.6e}", self.eps_true)),
            ("eps_pred [m2/s3]", format!("{:.6e}", self.eps_pred)),
        ];
        rows.iter()
            .map(|(k, v)| format!("{k:<18} {v}\n"))
            .collect()
    }
}

/// Subgrid metric, or `None` when the domain cannot support it.
fn optional_sgs(
    pred: &FlowState,
    truth: &FlowState,
    spec: FilterSpec,
    metric: &Metric,
) -> Result<Option<f64>> {
    match metric_sgs(pred, truth, spec, metric) {
        Ok(v) => Ok(Some(v)),
        Err(Error::DomainTooSmall(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Fills a [`MetricReport`]. Channel metrics use fields normalized with
/// `stats`; subgrid, energy and dissipation metrics use physical fields.
pub fn evaluate_pair(
    pred: &FlowState,
    truth: &FlowState,
    spec: FilterSpec,
    stats: &ChannelStats,
    ssim: &SsimConfig,
) -> Result<MetricReport> {
    ensure_same_shape(pred.grid(), truth.grid())?;
    let pn = normalize(pred, stats)?;
    let tn = normalize(truth, stats)?;
    let ssim_metric = Metric::Ssim(*ssim);
    let nrmse_metric = Metric::Nrmse { sqrt: false };
    let ek_true = kinetic_energy(truth);
    let ek_pred = kinetic_energy(pred);
    let eps_true = dissipation(truth)?;
    let eps_pred = dissipation(pred)?;
    Ok(MetricReport {
        ssim_rho_u: metric_rho_u(&pn, &tn, &ssim_metric)?,
        ssim_sgs: optional_sgs(pred, truth, spec, &ssim_metric)?,
        nrmse_rho_u: metric_rho_u(&pn, &tn, &nrmse_metric)?,
        nrmse_sgs: optional_sgs(pred, truth, spec, &nrmse_metric)?,
        nrmse_ek: nrmse_scalars(&[ek_pred], &[ek_true], false)?,
        nrmse_eps: nrmse_scalars(&[eps_pred], &[eps_true], false)?,
        ek_true,
        ek_pred,
        eps_true,
        eps_pred,
    })
}

/// Metrics over a collection of pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub samples: Vec<MetricReport>,
    /// Mean of the per-sample SSIMs.
    pub ssim_rho_u: f64,
    pub ssim_sgs: Option<f64>,
    /// Squared errors summed over all samples per channel, then macro-averaged.
    pub nrmse_rho_u: f64,
    pub nrmse_sgs: Option<f64>,
    pub nrmse_ek: f64,
    pub nrmse_eps: f64,
}

pub fn evaluate_batch(
    pairs: &[(FlowState, FlowState)],
    spec: FilterSpec,
    stats: &ChannelStats,
    ssim: &SsimConfig,
) -> Result<BatchReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no prediction/truth pairs"));
    }
    let samples = pairs
        .iter()
        .map(|(p, t)| evaluate_pair(p, t, spec, stats, ssim))
        .collect::<Result<Vec<_>>>()?;
    let n = samples.len() as f64;

    let normalized = pairs
        .iter()
        .map(|(p, t)| Ok((normalize(p, stats)?, normalize(t, stats)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut nrmse_rho_u = 0.0;
    for c in 0..4 {
        let channel: Vec<_> = normalized
            .iter()
            .map(|(p, t)| (p.channels()[c], t.channels()[c]))
            .collect();
        nrmse_rho_u += nrmse_batch(&channel, false)? / 4.0;
    }

    let nrmse_sgs = if samples.iter().all(|s| s.nrmse_sgs.is_some()) {
        let divs = pairs
            .iter()
            .map(|(p, t)| Ok((trimmed_sgs_divergence(p, spec)?, trimmed_sgs_divergence(t, spec)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut acc = 0.0;
        for k in 0..3 {
            let comp: Vec<_> = divs.iter().map(|(p, t)| (&p[k], &t[k])).collect();
            acc += nrmse_batch(&comp, false)? / 3.0;
        }
        Some(acc)
    } else {
        None
    };

    let ssim_sgs = samples
        .iter()
        .map(|s| s.ssim_sgs)
        .sum::<Option<f64>>()
        .map(|s| s / n);
    let ek_p: Vec<f64> = samples.iter().map(|s| s.ek_pred).collect();
    let ek_t: Vec<f64> = samples.iter().map(|s| s.ek_true).collect();
    let eps_p: Vec<f64> = samples.iter().map(|s| s.eps_pred).collect();
    let eps_t: Vec<f64> = samples.iter().map(|s| s.eps_true).collect();
    Ok(BatchReport {
        ssim_rho_u: samples.iter().map(|s| s.ssim_rho_u).sum::<f64>() / n,
        ssim_sgs,
        nrmse_rho_u,
        nrmse_sgs,
        nrmse_ek: nrmse_scalars(&ek_p, &ek_t, false)?,
        nrmse_eps: nrmse_scalars(&eps_p, &eps_t, false)?,
        samples,
    })
}

/// A report as one manifest-style CSV row keyed by sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub hash_id: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

pub fn report_rows_to_csv(rows: &[ReportRow]) -> Result<String> {
    let err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_HEADER).map_err(err)?;
    for r in rows {
        let m = &r.report;
        w.write_record([
            r.hash_id.clone(),
            m.ssim_rho_u.to_string(),
            opt(m.ssim_sgs),
            m.nrmse_rho_u.to_string(),
            opt(m.nrmse_sgs),
            m.nrmse_ek.to_string(),
            m.nrmse_eps.to_string(),
            m.ek_true.to_string(),
            m.ek_pred.to_string(),
            m.eps_true.to_string(),
            m.eps_pred.to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub const REPORT_HEADER: [&str; 11] = [
    "hash_id",
    "ssim_rho_u",
    "ssim_sgs",
    "nrmse_rho_u",
    "nrmse_sgs",
    "nrmse_ek",
    "nrmse_eps",
    "ek_true",
    "ek_pred",
    "eps_true",
    "eps_pred",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(g: GridSpec, seed: u64) -> ScalarField3D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScalarField3D::new(g, v, "").unwrap()
    }

    /// Direct per-window SSIM with two-pass moments.
    fn ssim_oracle(a: &ScalarField3D, b: &ScalarField3D, cfg: &SsimConfig) -> f64 {
        let [nx, ny, nz] = a.grid().dims();
        let w = cfg.window;
        let (c1, c2) = (cfg.c1 * cfg.c1, cfg.c2 * cfg.c2);
        let mut total = 0.0;
        let mut count = 0;
        for x in 0..=nx - w {
            for y in 0..=ny - w {
                for z in 0..=nz - w {
                    let mut pa = Vec::new();
                    let mut pb = Vec::new();
                    for i in 0..w {
                        for j in 0..w {
                            for k in 0..w {
                                pa.push(a.get(x + i, y + j, z + k));
                                pb.push(b.get(x + i, y + j, z + k));
                            }
                        }
                    }
                    let n = pa.len() as f64;
                    let ma = pa.iter().sum::<f64>() / n;
                    let mb = pb.iter().sum::<f64>() / n;
                    let va = pa.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
                    let vb = pb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
                    let cov = pa.iter().zip(&pb).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / n;
                    total += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_window_oracle() {
        let g = GridSpec::new(16, 14, 12, 1.0).unwrap();
        let a = random_field(g, 1);
        let b = a.zip_map(&random_field(g, 2), |x, y| x + 0.5 * y).unwrap();
        let cfg = SsimConfig::default();
        let got = ssim3d(&a, &b, &cfg).unwrap();
        assert!((got - ssim_oracle(&a, &b, &cfg)).abs() < 1e-10);
        assert!((ssim3d(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-9);
        let small = SsimConfig { window: 3, ..cfg };
        assert!((ssim3d(&a, &b, &small).unwrap() - ssim_oracle(&a, &b, &small)).abs() < 1e-10);
    }

    #[test]
    fn ssim_of_constants() {
        let g = GridSpec::cube(10, 1.0).unwrap();
        let zero = ScalarField3D::constant(g, 0.0, "");
        let one = ScalarField3D::constant(g, 1.0, "");
        let got = ssim3d(&zero, &one, &SsimConfig::default()).unwrap();
        assert!((got - 0.01 / 1.01).abs() < 1e-12, "{got}");
    }

    #[test]
    fn ssim_rejects_small_domains_and_bad_windows() {
        let g = GridSpec::new(8, 9, 9, 1.0).unwrap();
        let a = ScalarField3D::constant(g, 1.0, "");
        assert!(matches!(ssim3d(&a, &a, &SsimConfig::default()), Err(Error::DomainTooSmall(_))));
        let even = SsimConfig { window: 4, ..Default::default() };
        assert!(ssim3d(&a, &a, &even).is_err());
    }

    #[test]
    fn nrmse_fixture_and_scale_invariance() {
        assert_eq!(nrmse_scalars(&[1.0, 2.0], &[1.0, 3.0], false).unwrap(), 0.1);
        assert!((nrmse_scalars(&[1.0, 3.0], &[1.0, 2.0], false).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(nrmse_scalars(&[1.0], &[0.0], false), Err(Error::ZeroTruth)));
        let g = GridSpec::cube(5, 1.0).unwrap();
        let (p, t) = (random_field(g, 3), random_field(g, 4));
        let base = nrmse(&p, &t, false).unwrap();
        let k = 37.5;
        let scaled = nrmse(&p.map(|v| v * k), &t.map(|v| v * k), false).unwrap();
        assert!((base - scaled).abs() < 1e-12 * base);
        assert_eq!(nrmse(&t, &t, true).unwrap(), 0.0);
    }

    fn velocity_state(g: GridSpec, u: impl Fn(f64, f64, f64) -> [f64; 3]) -> FlowState {
        let dx = g.dx;
        let c = |k: usize| {
            ScalarField3D::from_fn(g, "", |x, y, z| u(x as f64 * dx, y as f64 * dx, z as f64 * dx)[k])
        };
        FlowState::new(ScalarField3D::constant(g, 1.0, ""), [c(0), c(1), c(2)]).unwrap()
    }

    #[test]
    fn dissipation_of_shear_and_rotation() {
        let g = GridSpec::cube(8, 0.25).unwrap();
        let shear = velocity_state(g, |_, y, _| [y, 0.0, 0.0]);
        assert!((dissipation(&shear).unwrap() - 1.0).abs() < 1e-10);
        let spin = velocity_state(g, |x, y, _| [-y, x, 0.0]);
        assert!(dissipation(&spin).unwrap().abs() < 1e-10);
        let kin = velocity_state(g, |_, _, _| [1.0, 2.0, 2.0]);
        assert!((kinetic_energy(&kin) - 4.5).abs() < 1e-14);
    }

    #[test]
    fn spectrum_parseval_and_single_mode() {
        let n = 16;
        let g = GridSpec::cube(n, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut r = || ScalarField3D::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(), "").unwrap();
        let s = FlowState::new(ScalarField3D::constant(g, 1.0, ""), [r(), r(), r()]).unwrap();
        let spec = tke_spectrum(&s).unwrap();
        let direct = fluctuation_energy(&s);
        assert!((spec.total() - direct).abs() < 1e-6 * direct);
        assert!(spec.energy[0] < 1e-20);

        let k0 = 3;
        let wave = velocity_state(g, |_, _, z| {
            [(2.0 * std::f64::consts::PI * k0 as f64 * z / n as f64).sin(), 0.0, 0.0]
        });
        let spec = tke_spectrum(&wave).unwrap();
        assert!(spec.energy[k0] >= 0.999 * spec.total());
        assert!((spec.total() - 0.25).abs() < 1e-12);
        let normalized = tke_spectrum_normalized(&wave).unwrap();
        assert!((normalized.total() - 1.5).abs() < 1e-12);
        assert!(spec.to_csv().starts_with("k,E\n0,"));
    }

    #[test]
    fn spectrum_needs_cube() {
        let g = GridSpec::new(4, 4, 6, 1.0).unwrap();
        let s = velocity_state(g, |_, _, _| [0.0; 3]);
        assert!(matches!(tke_spectrum(&s), Err(Error::NonCubic(4, 4, 6))));
    }

    #[test]
    fn identical_pair_report() {
        let g = GridSpec::cube(32, 0.1).unwrap();
        let mut s = velocity_state(g, |x, y, z| [(x + 2.0 * y).sin() + 1.0, (y * z).cos(), (z - x).sin()]);
        s.rho = ScalarField3D::from_fn(g, "", |x, y, z| 1.0 + 0.1 * ((x * y + z) as f64).sin());
        let stats = crate::field::compute_stats([&s]).unwrap();
        let spec = FilterSpec::new(2).unwrap();
        let r = evaluate_pair(&s, &s, spec, &stats, &SsimConfig::default()).unwrap();
        assert!((r.ssim_rho_u - 1.0).abs() < 1e-9);
        assert!((r.ssim_sgs.unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(r.nrmse_rho_u, 0.0);
        assert_eq!(r.nrmse_sgs, Some(0.0));
        assert_eq!(r.nrmse_ek, 0.0);
        assert_eq!(MetricReport::from_json(&r.to_json()).unwrap(), r);
        let small = evaluate_pair(&s, &s, FilterSpec::new(4).unwrap(), &stats, &SsimConfig::default()).unwrap();
        assert_eq!(small.ssim_sgs, None);
        assert_eq!(small.nrmse_sgs, Some(0.0));
        let csv = report_rows_to_csv(&[ReportRow { hash_id: "a".into(), report: small }]).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), REPORT_HEADER.join(","));
        assert!(lines.next().unwrap().starts_with("a,1,,0,0,"));
    }
}
