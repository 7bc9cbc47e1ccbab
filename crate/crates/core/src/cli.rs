//! `turbsr` command-line front end.
//!
//! Errors go to stderr as `error[E_CODE]: message` and the process exits with
//! the numeric [`crate::error::ErrorCode`].

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{verify_continuity, CubeSymmetry};
use crate::coarsen::{favre_filter, FilterSpec};
use crate::error::{Error, Result};
use crate::field::{compute_stats, ChannelStats, FlowState, GridSpec};
use crate::io::{
    decode_le_f32, emit_manifest, parse_manifest, read_momentum_state, write_atomic,
    write_momentum_state, InfoFile, ManifestRecord, Split, FLOW_VARIABLES, RHO,
};
use crate::loss::{LossConfig, LossReport};
use crate::metrics::{
    evaluate_batch, fluctuation_energy, report_rows_to_csv, tke_spectrum, tke_spectrum_normalized,
    BatchReport, ReportRow, SsimConfig,
};
use crate::subsample::{balanced_select, elbow, kmeans, moments, split};
use crate::tricubic::{flops, upsample_state, FlopsMode};

#[derive(Debug, Parser)]
#[command(name = "turbsr", version, about = "Coarsen, reconstruct and score 3D turbulence volumes")]
pub struct Cli {
    #[command(flatten)]
    pub opts: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct GlobalOpts {
    /// TOML file with defaults for the options below; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base directory for relative input paths.
    #[arg(long, global = true, env = "TURBSR_DATA_ROOT")]
    pub data_root: Option<PathBuf>,
    /// Seed for clustering, splits and symmetry draws [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Coarsening factor (2, 4, 8, 16 or 32) [default: 8].
    #[arg(long, global = true)]
    pub factor: Option<usize>,
    /// SSIM window edge [default: 9].
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// SSIM luminance constant [default: 0.1].
    #[arg(long, global = true)]
    pub c1: Option<f64>,
    /// SSIM contrast constant [default: 0.3].
    #[arg(long, global = true)]
    pub c2: Option<f64>,
    /// Gradient-loss weight [default: 0.99].
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Voxel spacing in meters [default: 1].
    #[arg(long, global = true)]
    pub dx: Option<f64>,
    /// Volume extents, `N` or `NX,NY,NZ` [default: 128].
    #[arg(long, global = true)]
    pub nxyz: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print extents, range and non-finite count of volume files.
    Inspect {
        /// `.dat` files, or sample directories when `--id` is given.
        paths: Vec<PathBuf>,
        /// Sample hash; expands each directory to its four channel files.
        #[arg(long)]
        id: Option<String>,
    },
    /// Favre-filter a sample and write the coarse channels.
    Coarsen {
        #[command(flatten)]
        input: SampleArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tricubic upsampling of a coarse sample.
    Baseline {
        #[command(flatten)]
        input: SampleArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Sample hashes (repeatable).
        #[arg(long = "id")]
        ids: Vec<String>,
        /// Manifest whose rows name the samples and their extents.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// JSON normalization statistics; computed from the truth set if absent.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Evaluate losses on physical instead of normalized fields.
        #[arg(long)]
        physical_loss: bool,
        /// Directory for `report.json` and `report.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster samples by velocity moments and draw a balanced, split subset.
    Sample {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding the manifest's samples.
        #[arg(long)]
        data: PathBuf,
        /// Fixed cluster count; chosen by the elbow rule when absent.
        #[arg(long)]
        k: Option<usize>,
        /// Largest k tried by the elbow search
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        /// Samples to keep [default: all].
        #[arg(long)]
        n_target: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check continuity under all 48 cube symmetries.
    AugmentTest {
        #[command(flatten)]
        input: SampleArgs,
    },
    /// Shell-averaged kinetic-energy spectrum as CSV.
    Spectrum {
        #[command(flatten)]
        input: SampleArgs,
        #[arg(long)]
        out: PathBuf,
        /// Scale velocity by its fluctuation RMS first.
        #[arg(long)]
        normalized: bool,
    },
}

/// One sample: a directory of `<VAR>_id<hash>.dat` files, or an `info.json`.
#[derive(Debug, Args)]
pub struct SampleArgs {
    pub path: PathBuf,
    /// Sample hash (directory input) or snapshot id (`info.json` input).
    #[arg(long)]
    pub id: String,
}

/// Config-file mirror of the global options.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    pub seed: Option<u64>,
    pub factor: Option<usize>,
    pub window: Option<usize>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub lambda: Option<f64>,
    pub dx: Option<f64>,
    pub nxyz: Option<String>,
}

/// Options after merging flags over the config file over defaults.
#[derive(Debug, Clone)]
pub struct Settings {
    pub data_root: Option<PathBuf>,
    pub seed: u64,
    pub factor: usize,
    pub ssim: SsimConfig,
    pub loss: LossConfig,
    pub dx: f64,
    pub nxyz: [usize; 3],
}

impl Settings {
    pub fn resolve(opts: &GlobalOpts) -> Result<Self> {
        let cfg = match &opts.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str::<RunConfig>(&text)
                    .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        let defaults = SsimConfig::default();
        let ssim = SsimConfig {
            window: opts.window.or(cfg.window).unwrap_or(defaults.window),
            c1: opts.c1.or(cfg.c1).unwrap_or(defaults.c1),
            c2: opts.c2.or(cfg.c2).unwrap_or(defaults.c2),
        };
        ssim.validate()?;
        let loss = LossConfig::new(
            opts.lambda.or(cfg.lambda).unwrap_or(crate::loss::DEFAULT_LAMBDA),
            None,
        )?;
        let factor = opts.factor.or(cfg.factor).unwrap_or(8);
        FilterSpec::new(factor)?;
        let nxyz = parse_nxyz(opts.nxyz.as_deref().or(cfg.nxyz.as_deref()).unwrap_or("128"))?;
        let dx = opts.dx.or(cfg.dx).unwrap_or(1.0);
        GridSpec::new(nxyz[0], nxyz[1], nxyz[2], dx)?;
        Ok(Self {
            data_root: opts.data_root.clone().or(cfg.data_root),
            seed: opts.seed.or(cfg.seed).unwrap_or(0),
            factor,
            ssim,
            loss,
            dx,
            nxyz,
        })
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.nxyz[0], self.nxyz[1], self.nxyz[2], self.dx)
    }

    fn resolve_path(&self, p: &Path) -> PathBuf {
        match &self.data_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn load(&self, input: &SampleArgs) -> Result<FlowState> {
        self.load_from(&input.path, &input.id, self.grid()?)
    }

    fn load_from(&self, path: &Path, id: &str, grid: GridSpec) -> Result<FlowState> {
        let path = self.resolve_path(path);
        if path.extension().is_some_and(|e| e == "json") {
            let info = InfoFile::read(&path)?;
            let snap: usize = id
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("snapshot id {id:?} is not an integer")))?;
            let local = info
                .snapshot(snap)
                .ok_or_else(|| Error::Metadata(format!("no snapshot {snap} in {}", path.display())))?;
            let root = path.parent().unwrap_or(Path::new("."));
            crate::io::load_flow_state(&info.global, local, root, grid.dx)
        } else {
            read_momentum_state(&path, id, grid)
        }
    }
}

pub fn parse_nxyz(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad extents {s:?}")))?;
    match parts[..] {
        [n] => Ok([n; 3]),
        [a, b, c] => Ok([a, b, c]),
        _ => Err(Error::InvalidArgument(format!("extents {s:?} need 1 or 3 values"))),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.code();
            eprintln!("error[{}]: {e}", code.as_str());
            code as i32
        }
    }
}

pub fn run() -> i32 {
    main_with_args(std::env::args_os())
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let s = Settings::resolve(&cli.opts)?;
    match &cli.command {
        Command::Inspect { paths, id } => cmd_inspect(&s, paths, id.as_deref(), out),
        Command::Coarsen { input, out: dir } => cmd_coarsen(&s, input, dir, out),
        Command::Baseline { input, out: dir } => cmd_baseline(&s, input, dir, out),
        Command::Evaluate {
            pred,
            truth,
            ids,
            manifest,
            stats,
            physical_loss,
            out: dir,
        } => cmd_evaluate(
            &s,
            EvaluateArgs {
                pred,
                truth,
                ids,
                manifest: manifest.as_deref(),
                stats: stats.as_deref(),
                physical_loss: *physical_loss,
                out_dir: dir.as_deref(),
            },
            out,
        ),
        Command::Sample {
            manifest,
            data,
            k,
            k_max,
            n_target,
            out: path,
        } => cmd_sample(&s, manifest, data, *k, *k_max, *n_target, path, out),
        Command::AugmentTest { input } => cmd_augment_test(&s, input, out),
        Command::Spectrum {
            input,
            out: path,
            normalized,
        } => cmd_spectrum(&s, input, path, *normalized, out),
    }
}

fn emit(out: &mut dyn Write, text: impl AsRef<str>) -> Result<()> {
    out.write_all(text.as_ref().as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn cmd_inspect(s: &Settings, paths: &[PathBuf], id: Option<&str>, out: &mut dyn Write) -> Result<()> {
    if paths.is_empty() {
        return Err(Error::EmptyInput("no paths to inspect"));
    }
    let files: Vec<PathBuf> = match id {
        Some(hash) => paths
            .iter()
            .flat_map(|d| {
                FLOW_VARIABLES
                    .iter()
                    .map(move |v| crate::io::momentum_filename(v, hash).map(|f| d.join(f)))
            })
            .collect::<Result<_>>()?,
        None => paths.to_vec(),
    };
    let grid = s.grid()?;
    for f in files {
        let path = s.resolve_path(&f);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = grid.len() as u64 * 4;
        if bytes.len() as u64 != expected {
            return Err(Error::SizeMismatch {
                path: path.clone(),
                expected,
                actual: bytes.len() as u64,
            });
        }
        let mut values = Vec::with_capacity(grid.len());
        decode_le_f32(&bytes, &mut values);
        let non_finite = values.iter().filter(|v| !v.is_finite()).count();
        let (min, max) = values
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let mut line = format!(
            "{}: {}x{}x{} min={min:.6e} max={max:.6e} non_finite={non_finite}",
            path.display(),
            grid.nx,
            grid.ny,
            grid.nz
        );
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.starts_with(RHO) {
            let bad = values.iter().filter(|&&v| v.is_finite() && v <= 0.0).count();
            line.push_str(&format!(" nonpositive_density={bad}"));
        }
        emit(out, line + "\n")?;
    }
    Ok(())
}

fn cmd_coarsen(s: &Settings, input: &SampleArgs, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let spec = FilterSpec::new(s.factor)?;
    let fine = s.load(input)?;
    let coarse = favre_filter(&fine, spec)?;
    let written = write_momentum_state(&coarse, dir, &input.id)?;
    let f3 = (s.factor * s.factor * s.factor) as f64;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(f64::MIN_POSITIVE);
    let mass = rel(fine.rho.sum(), coarse.rho.sum() * f3);
    let mom = (0..3)
        .map(|k| rel(fine.momentum(k).sum(), coarse.momentum(k).sum() * f3))
        .fold(0.0, f64::max);
    let g = coarse.grid();
    emit(
        out,
        format!(
            "coarse grid {}x{}x{} (factor {})\nconservation: mass rel err {mass:.3e}, momentum rel err {mom:.3e}\n",
            g.nx, g.ny, g.nz, s.factor
        ),
    )?;
    for p in written {
        emit(out, format!("wrote {}\n", p.display()))?;
    }
    Ok(())
}

fn cmd_baseline(s: &Settings, input: &SampleArgs, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let coarse = s.load(input)?;
    let fine = upsample_state(&coarse, s.factor)?;
    let g = *fine.grid();
    let written = write_momentum_state(&fine, dir, &input.id)?;
    emit(
        out,
        format!(
            "upsampled {}x{}x{} -> {}x{}x{}\nflops sparse={} dense={}\n",
            coarse.grid().nx,
            coarse.grid().ny,
            coarse.grid().nz,
            g.nx,
            g.ny,
            g.nz,
            flops(&g, 4, FlopsMode::Sparse),
            flops(&g, 4, FlopsMode::Dense)
        ),
    )?;
    for p in written {
        emit(out, format!("wrote {}\n", p.display()))?;
    }
    Ok(())
}

struct EvaluateArgs<'a> {
    pred: &'a Path,
    truth: &'a Path,
    ids: &'a [String],
    manifest: Option<&'a Path>,
    stats: Option<&'a Path>,
    physical_loss: bool,
    out_dir: Option<&'a Path>,
}

#[derive(Debug, Serialize)]
struct EvaluationOutput<'a> {
    stats: ChannelStats,
    metrics: &'a BatchReport,
    loss: LossReport,
}

fn batch_table(b: &BatchReport, l: &LossReport) -> String {
    let opt = |v: Option<f64>, e: bool| match v {
        Some(v) if e => format!("{v:.6e}"),
        Some(v) => format!("{v:.6}"),
        None => "n/a".into(),
    };
    let rows = [
        ("samples", b.samples.len().to_string()),
        ("SSIM_rho,u", format!("{:.6}", b.ssim_rho_u)),
        ("SSIM_sgs", opt(b.ssim_sgs, false)),
        ("NRMSE_rho,u", format!("{:.6e}", b.nrmse_rho_u)),
        ("NRMSE_sgs", opt(b.nrmse_sgs, true)),
        ("NRMSE_Ek", format!("{:.6e}", b.nrmse_ek)),
        ("NRMSE_eps", format!("{:.6e}", b.nrmse_eps)),
        ("L_MSE", format!("{:.6e}", l.mse)),
        ("L_MAE", format!("{:.6e}", l.mae)),
        ("L_grad", format!("{:.6e}", l.grad)),
        ("L_phys", format!("{:.6e}", l.phys)),
    ];
    rows.iter().map(|(k, v)| format!("{k:<12} {v}\n")).collect()
}

fn cmd_evaluate(s: &Settings, a: EvaluateArgs<'_>, out: &mut dyn Write) -> Result<()> {
    let spec = FilterSpec::new(s.factor)?;
    let samples: Vec<(String, GridSpec)> = match a.manifest {
        Some(m) => parse_manifest(s.resolve_path(m))?
            .iter()
            .map(|r| Ok((r.hash_id.clone(), r.grid(s.dx)?)))
            .collect::<Result<_>>()?,
        None => {
            let g = s.grid()?;
            a.ids.iter().map(|id| (id.clone(), g)).collect()
        }
    };
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to evaluate"));
    }
    let pairs = samples
        .par_iter()
        .map(|(id, g)| Ok((s.load_from(a.pred, id, *g)?, s.load_from(a.truth, id, *g)?)))
        .collect::<Result<Vec<_>>>()?;
    let stats = match a.stats {
        Some(p) => {
            let p = s.resolve_path(p);
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let st: ChannelStats = serde_json::from_str(&text)
                .map_err(|e| Error::InvalidArgument(format!("{}: {e}", p.display())))?;
            st.validate()?;
            st
        }
        None => compute_stats(pairs.iter().map(|(_, t)| t))?,
    };
    let report = evaluate_batch(&pairs, spec, &stats, &s.ssim)?;
    let (preds, truths): (Vec<FlowState>, Vec<FlowState>) = pairs.into_iter().unzip();
    let loss_stats = (!a.physical_loss).then_some(&stats);
    let loss = LossReport::compute(&preds, &truths, &s.loss, loss_stats)?;
    emit(out, batch_table(&report, &loss))?;
    if let Some(dir) = a.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(&EvaluationOutput {
            stats,
            metrics: &report,
            loss,
        })
        .expect("report serializes");
        write_atomic(&dir.join("report.json"), json.as_bytes())?;
        let rows: Vec<ReportRow> = samples
            .iter()
            .zip(&report.samples)
            .map(|((id, _), r)| ReportRow {
                hash_id: id.clone(),
                report: r.clone(),
            })
            .collect();
        write_atomic(&dir.join("report.csv"), report_rows_to_csv(&rows)?.as_bytes())?;
        emit(out, format!("wrote {}\n", dir.display()))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sample(
    s: &Settings,
    manifest: &Path,
    data: &Path,
    k: Option<usize>,
    k_max: usize,
    n_target: Option<usize>,
    path: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let records = parse_manifest(s.resolve_path(manifest))?;
    if records.is_empty() {
        return Err(Error::EmptyInput("manifest has no samples"));
    }
    let n_target = n_target.unwrap_or(records.len());
    if n_target > records.len() {
        return Err(Error::InvalidArgument(format!(
            "n_target {n_target} exceeds the {} available samples",
            records.len()
        )));
    }
    let data = s.resolve_path(data);
    let features = records
        .par_iter()
        .map(|r| Ok(moments(&read_momentum_state(&data, &r.hash_id, r.grid(s.dx)?)?)))
        .collect::<Result<Vec<_>>>()?;
    let k = match k {
        Some(k) => k,
        None => {
            let e = elbow(&features, 1..=k_max, s.seed)?;
            for (k, inertia) in &e.curve {
                emit(out, format!("k={k} inertia={inertia:.6e}\n"))?;
            }
            emit(out, format!("elbow k={}\n", e.k))?;
            e.k
        }
    };
    let model = kmeans(&features, k, s.seed)?;
    let chosen = balanced_select(&model.assignments, n_target, s.seed)?;
    let sets = split(&chosen, s.seed);
    let label = |i: usize| {
        if sets.val.binary_search(&i).is_ok() {
            Split::Val
        } else if sets.test.binary_search(&i).is_ok() {
            Split::Test
        } else {
            Split::Train
        }
    };
    let selected: Vec<ManifestRecord> = chosen
        .iter()
        .map(|&i| ManifestRecord {
            cluster: Some(model.assignments[i]),
            split: Some(label(i)),
            ..records[i].clone()
        })
        .collect();
    emit_manifest(&selected, path)?;
    emit(
        out,
        format!(
            "clusters={k} selected={} train={} val={} test={}\nwrote {}\n",
            selected.len(),
            sets.train.len(),
            sets.val.len(),
            sets.test.len(),
            path.display()
        ),
    )
}

fn cmd_augment_test(s: &Settings, input: &SampleArgs, out: &mut dyn Write) -> Result<()> {
    let state = s.load(input)?;
    let cubic = state.grid().is_cubic();
    if !cubic {
        emit(out, "notice: non-cubic domain, axis-permuting symmetries skipped\n")?;
    }
    let scale = (0..3)
        .map(|k| state.momentum(k).values().iter().fold(0.0f64, |a, v| a.max(v.abs())))
        .fold(0.0f64, f64::max)
        / state.grid().dx;
    let tol = 1e-10 * scale.max(1.0);
    emit(out, "index perm signs det max_dev\n")?;
    let mut worst = 0.0f64;
    for g in CubeSymmetry::all() {
        if g.permutes_axes() && !cubic {
            continue;
        }
        let dev = verify_continuity(&state, &g)?;
        worst = worst.max(dev);
        let p = g.perm();
        let sg = g.signs().map(|v| if v > 0 { '+' } else { '-' });
        emit(
            out,
            format!(
                "{:>2} {}{}{} {}{}{} {:+} {dev:.3e}\n",
                g.index(),
                p[0] + 1,
                p[1] + 1,
                p[2] + 1,
                sg[0],
                sg[1],
                sg[2],
                g.determinant()
            ),
        )?;
    }
    emit(
        out,
        format!(
            "max deviation {worst:.3e} ({})\n",
            if worst <= tol { "pass" } else { "FAIL" }
        ),
    )
}

fn cmd_spectrum(s: &Settings, input: &SampleArgs, path: &Path, normalized: bool, out: &mut dyn Write) -> Result<()> {
    let state = s.load(input)?;
    let spec = if normalized {
        tke_spectrum_normalized(&state)?
    } else {
        tke_spectrum(&state)?
    };
    write_atomic(path, spec.to_csv().as_bytes())?;
    let direct = if normalized {
        let e = fluctuation_energy(&state);
        if e > 0.0 {
            1.5
        } else {
            0.0
        }
    } else {
        fluctuation_energy(&state)
    };
    let total = spec.total();
    let residual = (total - direct).abs() / direct.abs().max(f64::MIN_POSITIVE);
    emit(
        out,
        format!(
            "parseval: sum E(k) = {total:.12e}, <|u'|^2>/2 = {direct:.12e}, rel residual = {residual:.3e}\nwrote {}\n",
            path.display()
        ),
    )
}
