//! Command-line front end: classify parameter points, run quench
//! experiments, scan parameter planes for closed-form crossing times, and
//! run the seeded regression selftest.
//!
//! Exit codes: 0 success, 1 configuration error, 2 domain or wrong-region
//! error. `MPEMBA_LAB_THREADS` caps scan parallelism. All CSV floats are
//! printed with 17 significant digits so files round-trip losslessly.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::evolution::{
    default_horizon, mode_coefficients, propagate_rk4, Propagator, DEFAULT_GRID_POINTS,
    DEFAULT_RK4_DT,
};
use crate::lambertw::{lambert_w, WBranch};
use crate::lindblad::{
    initial_condition, random_physical_state, steady_state, ControlParams, DensityVector,
    QuenchExperiment,
};
use crate::mpemba::{
    crossing_times_closed_form, delta_coefficients_with, equal_gap_branch_roots,
    find_crossings_grid, region_a1_criterion, second_order_branch_roots, third_order_branch_roots,
    Classification, CrossingMethod, MpembaReport,
};
use crate::observables::{
    energy, entropy, kl_divergence, kl_speed, temperature, ObservableKind,
};
use crate::spectrum::{
    classify_region, e_point, eigensystem, region_b_m2_gamma, region_c_gamma, region_d_gamma,
    RegionTag, DEFAULT_EP_TOL,
};

/// Formats a float with 17 significant digits (lossless round trip).
fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "mpemba-lab",
    about = "Driven-dissipative two-level relaxation: spectra, quenches, crossing analysis",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify a control-plane point and print its eigenvalues.
    Classify(ClassifyArgs),
    /// Run a two-copy quench and write observable time series plus
    /// crossing reports.
    Quench(QuenchArgs),
    /// Scan a rectangular (d_I, d_II) grid of closed-form crossing times.
    Scan(ScanArgs),
    /// Closed-form or grid crossing report for a single experiment.
    Crossings(CrossingsArgs),
    /// Seeded regression suite; identical seeds write identical files.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug, Clone)]
struct PostPointArgs {
    /// Post-quench drive.
    #[arg(long = "d", allow_hyphen_values = true)]
    d: Option<f64>,
    /// Post-quench dissipation (explicit value).
    #[arg(long = "gamma")]
    gamma: Option<f64>,
    /// Put the post-quench point on the slower-pair exceptional line.
    #[arg(long = "gamma-from-d-line", conflicts_with_all = ["gamma", "gamma_from_c_line", "gamma_from_m2_line", "snap_e"])]
    gamma_from_d_line: bool,
    /// Put the post-quench point on the faster-pair exceptional line.
    #[arg(long = "gamma-from-c-line", conflicts_with_all = ["gamma", "gamma_from_m2_line", "snap_e"])]
    gamma_from_c_line: bool,
    /// Put the post-quench point on the equal-gap line.
    #[arg(long = "gamma-from-m2-line", conflicts_with_all = ["gamma", "snap_e"])]
    gamma_from_m2_line: bool,
    /// Snap to the third-order exceptional point (fixes both d and gamma).
    #[arg(long = "snap-e", conflicts_with = "gamma")]
    snap_e: bool,
}

impl PostPointArgs {
    fn gamma_spec(&self) -> Option<GammaSpec> {
        if self.snap_e {
            Some(GammaSpec::SnapE)
        } else if self.gamma_from_d_line {
            Some(GammaSpec::FromDLine)
        } else if self.gamma_from_c_line {
            Some(GammaSpec::FromCLine)
        } else if self.gamma_from_m2_line {
            Some(GammaSpec::FromM2Line)
        } else {
            self.gamma.map(GammaSpec::Value)
        }
    }

    /// Complete point specification, if the flags form one.
    fn to_spec(&self) -> Option<PostSpec> {
        self.gamma_spec().map(|gamma| PostSpec { d: self.d, gamma })
    }
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[command(flatten)]
    point: PostPointArgs,
    /// Relative eigenvalue-gap tolerance for degeneracy detection.
    #[arg(long, default_value_t = DEFAULT_EP_TOL)]
    ep_tol: f64,
    /// Emit JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug, Clone)]
struct ExperimentArgs {
    /// Pre-quench drive of copy I.
    #[arg(long = "d-i", allow_hyphen_values = true)]
    d_i: Option<f64>,
    /// Pre-quench dissipation of copy I (defaults to the post-quench value).
    #[arg(long = "gamma-i")]
    gamma_i: Option<f64>,
    /// Pre-quench drive of copy II.
    #[arg(long = "d-ii", allow_hyphen_values = true)]
    d_ii: Option<f64>,
    /// Pre-quench dissipation of copy II (defaults to the post-quench value).
    #[arg(long = "gamma-ii")]
    gamma_ii: Option<f64>,
    #[command(flatten)]
    post: PostPointArgs,
}

#[derive(Args, Debug)]
struct QuenchArgs {
    /// JSON run configuration; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Comma-separated observables (gg, energy, entropy, temperature, kl, kl_speed).
    #[arg(long, value_delimiter = ',')]
    observables: Vec<String>,
    /// Time horizon (default: twenty lifetimes of the slowest mode).
    #[arg(long)]
    horizon: Option<f64>,
    /// Number of grid samples.
    #[arg(long = "grid-points")]
    grid_points: Option<usize>,
    /// Crossing search: auto, closed-form, or grid.
    #[arg(long, value_enum)]
    method: Option<SearchMethod>,
    /// Output base path; writes <out>.csv / <out>.json and <out>.report.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Time-series format.
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Seed echoed into the config (for config round trips).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ScanArgs {
    #[command(flatten)]
    post: PostPointArgs,
    /// Observable: gg or energy.
    #[arg(long, default_value = "gg")]
    kind: String,
    #[arg(long = "d-i-min")]
    d_i_min: f64,
    #[arg(long = "d-i-max")]
    d_i_max: f64,
    #[arg(long = "d-i-steps", default_value_t = 50)]
    d_i_steps: usize,
    #[arg(long = "d-ii-min")]
    d_ii_min: f64,
    #[arg(long = "d-ii-max")]
    d_ii_max: f64,
    #[arg(long = "d-ii-steps", default_value_t = 50)]
    d_ii_steps: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
}

#[derive(Args, Debug)]
struct CrossingsArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Observable: gg or energy for closed forms; any for the grid.
    #[arg(long, default_value = "gg")]
    kind: String,
    #[arg(long, value_enum, default_value_t = SearchMethod::Auto)]
    method: SearchMethod,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long = "grid-points", default_value_t = DEFAULT_GRID_POINTS)]
    grid_points: usize,
    /// Also run the grid oracle and report both (closed-form runs only).
    #[arg(long)]
    verify_grid: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, default_value_t = 20240 as u64)]
    seed: u64,
    /// Report file (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

/// Search strategy for crossing reports.
#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    /// Closed form where the region admits one, grid otherwise.
    #[default]
    Auto,
    /// Closed form only; wrong regions are an error.
    ClosedForm,
    /// Grid oracle only.
    Grid,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Post-quench point specification: explicit dissipation or one of the
/// snapped exceptional constructions (computed internally in full
/// precision, never from user-typed decimals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSpec {
    Value(f64),
    FromDLine,
    FromCLine,
    FromM2Line,
    SnapE,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostSpec {
    /// Drive; may be omitted only with `snap_e`.
    #[serde(default)]
    pub d: Option<f64>,
    pub gamma: GammaSpec,
}

impl PostSpec {
    pub fn resolve(&self) -> Result<ControlParams, Error> {
        let (d, gamma) = match (&self.gamma, self.d) {
            (GammaSpec::SnapE, d) => {
                let e = e_point();
                (d.unwrap_or(e.d_tilde), e.gamma_tilde)
            }
            (GammaSpec::Value(g), Some(d)) => (d, *g),
            (GammaSpec::FromDLine, Some(d)) => (d, region_d_gamma(d)?),
            (GammaSpec::FromCLine, Some(d)) => (d, region_c_gamma(d)?),
            (GammaSpec::FromM2Line, Some(d)) => (d, region_b_m2_gamma(d)?),
            (_, None) => {
                return Err(Error::Config {
                    field: "post.d".into(),
                    message: "a drive value is required unless snapping to the third-order point".into(),
                })
            }
        };
        ControlParams::new(d, gamma).map_err(|e| Error::Config {
            field: "post".into(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub d_i: f64,
    /// Defaults to the post-quench dissipation (fixed-dissipation protocol).
    #[serde(default)]
    pub gamma_i: Option<f64>,
    pub d_ii: f64,
    #[serde(default)]
    pub gamma_ii: Option<f64>,
    pub post: PostSpec,
}

impl ExperimentSpec {
    pub fn resolve(&self) -> Result<QuenchExperiment, Error> {
        let post = self.post.resolve()?;
        let pre = |field: &str, d: f64, g: Option<f64>| -> Result<ControlParams, Error> {
            ControlParams::new(d, g.unwrap_or(post.gamma_tilde)).map_err(|e| Error::Config {
                field: field.into(),
                message: e.to_string(),
            })
        };
        Ok(QuenchExperiment::new(
            pre("pre_i", self.d_i, self.gamma_i)?,
            pre("pre_ii", self.d_ii, self.gamma_ii)?,
            post,
        ))
    }
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

fn default_observables() -> Vec<ObservableKind> {
    vec![ObservableKind::GroundPop, ObservableKind::Energy]
}

/// A full quench-run configuration; round-trips losslessly through JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentSpec,
    #[serde(default = "default_observables")]
    pub observables: Vec<ObservableKind>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub method: SearchMethod,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn parse_observable(s: &str) -> Result<ObservableKind, Error> {
    ObservableKind::ALL
        .into_iter()
        .find(|k| k.label() == s)
        .ok_or_else(|| Error::Config {
            field: "observables".into(),
            message: format!(
                "unknown observable `{s}` (expected one of gg, energy, entropy, temperature, kl, kl_speed)"
            ),
        })
}

/// Entry point used by the binary.
pub fn run() -> std::process::ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; anything else is a
            // configuration error.
            let _ = e.print();
            return if e.use_stderr() {
                std::process::ExitCode::from(1)
            } else {
                std::process::ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Classify(args) => cmd_classify(args),
        Command::Quench(args) => cmd_quench(args),
        Command::Scan(args) => cmd_scan(args),
        Command::Crossings(args) => cmd_crossings(args),
        Command::Selftest(args) => cmd_selftest(args),
    }
}

#[derive(Serialize)]
struct ClassifyReport {
    d_tilde: f64,
    gamma_tilde: f64,
    region: RegionTag,
    lambdas: [[f64; 2]; 4],
    lambda_slow: f64,
    /// Pairwise |lambda_i - lambda_j| of the nonzero modes, a direct
    /// exceptional-point proximity diagnostic.
    nonzero_gaps: [f64; 3],
    gap_ratio: Option<f64>,
    /// Offsets of gamma from the snapped special lines at this drive,
    /// when the lines exist.
    line_offsets: LineOffsets,
}

#[derive(Serialize)]
struct LineOffsets {
    d_line: Option<f64>,
    c_line: Option<f64>,
    m2_line: Option<f64>,
    e_point: f64,
}

fn cmd_classify(args: ClassifyArgs) -> Result<(), Error> {
    let spec = args.point.to_spec().ok_or_else(|| Error::Config {
        field: "gamma".into(),
        message: "a dissipation value or one of the snap flags is required".into(),
    })?;
    let p = spec.resolve()?;
    if !(args.ep_tol > 0.0) {
        return Err(Error::Config {
            field: "ep_tol".into(),
            message: format!("must be positive, got {}", args.ep_tol),
        });
    }
    let region = classify_region(p, args.ep_tol);
    let data = eigensystem(p);
    let lams = data.lambdas;
    let gaps = [
        (lams[2] - lams[1]).norm(),
        (lams[3] - lams[2]).norm(),
        (lams[3] - lams[1]).norm(),
    ];
    let e = e_point();
    let report = ClassifyReport {
        d_tilde: p.d_tilde,
        gamma_tilde: p.gamma_tilde,
        region,
        lambdas: lams.map(|l| [l.re, l.im]),
        lambda_slow: data.lambda_slow(),
        nonzero_gaps: gaps,
        gap_ratio: data.gap_ratio(),
        line_offsets: LineOffsets {
            d_line: region_d_gamma(p.d_tilde).ok().map(|g| p.gamma_tilde - g),
            c_line: region_c_gamma(p.d_tilde).ok().map(|g| p.gamma_tilde - g),
            m2_line: region_b_m2_gamma(p.d_tilde).ok().map(|g| p.gamma_tilde - g),
            e_point: ((p.d_tilde - e.d_tilde).powi(2) + (p.gamma_tilde - e.gamma_tilde).powi(2))
                .sqrt(),
        },
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("point: d = {}, gamma = {}", fmt17(p.d_tilde), fmt17(p.gamma_tilde));
        println!("region: {:?}", report.region);
        for (k, l) in lams.iter().enumerate() {
            println!("lambda_{} = {} {:+}i", k + 1, fmt17(l.re), l.im);
        }
        println!("lambda_slow = {}", fmt17(report.lambda_slow));
        println!(
            "nonzero gaps |l2-l3|, |l3-l4|, |l2-l4| = {}, {}, {}",
            fmt17(gaps[0]),
            fmt17(gaps[1]),
            fmt17(gaps[2])
        );
        if let Some(m) = report.gap_ratio {
            println!("gap ratio (l4-l3)/(l3-l2) = {}", fmt17(m));
        }
        if let Some(off) = report.line_offsets.d_line {
            println!("gamma offset from slower-pair line = {}", fmt17(off));
        }
        if let Some(off) = report.line_offsets.c_line {
            println!("gamma offset from faster-pair line = {}", fmt17(off));
        }
        if let Some(off) = report.line_offsets.m2_line {
            println!("gamma offset from equal-gap line = {}", fmt17(off));
        }
        println!(
            "distance from third-order point = {}",
            fmt17(report.line_offsets.e_point)
        );
    }
    Ok(())
}

fn merge_quench_config(args: &QuenchArgs) -> Result<RunConfig, Error> {
    let mut cfg: RunConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Error::Config {
                field: "config".into(),
                message: e.to_string(),
            })?
        }
        None => {
            let (Some(d_i), Some(d_ii), Some(post)) = (
                args.experiment.d_i,
                args.experiment.d_ii,
                args.experiment.post.to_spec(),
            ) else {
                return Err(Error::Config {
                    field: "experiment".into(),
                    message: "need --config or all of --d-i, --d-ii and a post-quench point".into(),
                });
            };
            RunConfig {
                experiment: ExperimentSpec {
                    d_i,
                    gamma_i: args.experiment.gamma_i,
                    d_ii,
                    gamma_ii: args.experiment.gamma_ii,
                    post,
                },
                observables: default_observables(),
                horizon: None,
                grid_points: DEFAULT_GRID_POINTS,
                method: SearchMethod::Auto,
                format: OutputFormat::Csv,
                seed: 0,
                output: None,
            }
        }
    };
    // Flags override file values.
    if args.config.is_some() {
        if let Some(d) = args.experiment.d_i {
            cfg.experiment.d_i = d;
        }
        if let Some(d) = args.experiment.d_ii {
            cfg.experiment.d_ii = d;
        }
        if let Some(g) = args.experiment.gamma_i {
            cfg.experiment.gamma_i = Some(g);
        }
        if let Some(g) = args.experiment.gamma_ii {
            cfg.experiment.gamma_ii = Some(g);
        }
        if let Some(gamma) = args.experiment.post.gamma_spec() {
            cfg.experiment.post.gamma = gamma;
        }
        if let Some(d) = args.experiment.post.d {
            cfg.experiment.post.d = Some(d);
        }
    }
    if !args.observables.is_empty() {
        cfg.observables = args
            .observables
            .iter()
            .map(|s| parse_observable(s))
            .collect::<Result<_, _>>()?;
    }
    if let Some(h) = args.horizon {
        cfg.horizon = Some(h);
    }
    if let Some(n) = args.grid_points {
        cfg.grid_points = n;
    }
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(f) = args.format {
        cfg.format = f;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(out) = &args.out {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct ObservableReportEntry {
    observable: ObservableKind,
    method_requested: SearchMethod,
    report: MpembaReport,
}

#[derive(Serialize)]
struct QuenchReportFile {
    region: RegionTag,
    lambdas: [[f64; 2]; 4],
    lambda_slow: f64,
    horizon: f64,
    grid_points: usize,
    observables: Vec<ObservableReportEntry>,
}

struct QuenchSeries {
    times: Vec<f64>,
    /// Column name -> samples (None where the observable is undefined).
    columns: Vec<(String, Vec<Option<f64>>)>,
}

fn observable_sample(
    kind: ObservableKind,
    rho: &DensityVector,
    post: ControlParams,
    ss: &DensityVector,
) -> Option<f64> {
    match kind {
        ObservableKind::GroundPop => Some(rho.rho_gg.re),
        ObservableKind::Energy => Some(energy(rho, post)),
        ObservableKind::Entropy => Some(entropy(rho)),
        ObservableKind::Temperature => temperature(rho, post),
        ObservableKind::KLDivergence => {
            let v = kl_divergence(rho, ss);
            v.is_finite().then_some(v)
        }
        ObservableKind::KLSpeed => kl_speed(rho, post, ss).ok(),
    }
}

/// Runs the configured experiment, producing the sampled time series and a
/// crossing report per observable. Library-level entry point of the
/// `quench` subcommand.
pub fn run_quench(cfg: &RunConfig) -> Result<(QuenchSeriesPublic, QuenchReportPublic), Error> {
    let exp = cfg.experiment.resolve()?;
    let prop = Propagator::new(exp.post);
    let spec = prop.spectral_data().clone();
    let horizon = match cfg.horizon {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => {
            return Err(Error::Config {
                field: "horizon".into(),
                message: format!("must be positive and finite, got {h}"),
            })
        }
        None => {
            let h = default_horizon(&spec);
            if !h.is_finite() {
                return Err(Error::Config {
                    field: "horizon".into(),
                    message: "the slowest mode does not decay here; pass an explicit horizon".into(),
                });
            }
            h
        }
    };
    if cfg.grid_points < 2 {
        return Err(Error::Config {
            field: "grid_points".into(),
            message: format!("need at least 2, got {}", cfg.grid_points),
        });
    }

    let ss = steady_state(exp.post);
    let (rho_i0, rho_ii0) = exp.initial_pair();
    let coeff_i = mode_coefficients(&rho_i0, &spec);
    let coeff_ii = mode_coefficients(&rho_ii0, &spec);

    let n = cfg.grid_points;
    let mut times = Vec::with_capacity(n + 1);
    let mut columns: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for kind in &cfg.observables {
        columns.push((format!("{}_I", kind.label()), Vec::with_capacity(n + 1)));
        columns.push((format!("{}_II", kind.label()), Vec::with_capacity(n + 1)));
        columns.push((format!("delta_{}", kind.label()), Vec::with_capacity(n + 1)));
    }
    for i in 0..=n {
        let t = horizon * i as f64 / n as f64;
        times.push(t);
        let rho_i = prop.evolve_coefficients(&coeff_i, t);
        let rho_ii = prop.evolve_coefficients(&coeff_ii, t);
        for (j, kind) in cfg.observables.iter().enumerate() {
            let a = observable_sample(*kind, &rho_i, exp.post, &ss);
            let b = observable_sample(*kind, &rho_ii, exp.post, &ss);
            columns[3 * j].1.push(a);
            columns[3 * j + 1].1.push(b);
            columns[3 * j + 2].1.push(match (a, b) {
                (Some(x), Some(y)) => Some(x - y),
                _ => None,
            });
        }
    }

    let mut entries = Vec::new();
    for kind in &cfg.observables {
        let closed = |spec: &crate::spectrum::SpectralData| -> Result<MpembaReport, Error> {
            let c = delta_coefficients_with(&exp, *kind, spec)?;
            crossing_times_closed_form(&c)
        };
        let report = match cfg.method {
            SearchMethod::ClosedForm => closed(&spec)?,
            SearchMethod::Grid => find_crossings_grid(&exp, *kind, horizon, n)?,
            SearchMethod::Auto => match closed(&spec) {
                Ok(r) => r,
                Err(Error::WrongRegion { .. }) | Err(Error::Domain(_)) | Err(Error::OffGapLine(_)) => {
                    find_crossings_grid(&exp, *kind, horizon, n)?
                }
                Err(e) => return Err(e),
            },
        };
        entries.push(ObservableReportEntry {
            observable: *kind,
            method_requested: cfg.method,
            report,
        });
    }

    let report = QuenchReportFile {
        region: spec.region,
        lambdas: spec.lambdas.map(|l| [l.re, l.im]),
        lambda_slow: spec.lambda_slow(),
        horizon,
        grid_points: n,
        observables: entries,
    };
    Ok((QuenchSeriesPublic(QuenchSeries { times, columns }), QuenchReportPublic(report)))
}

/// Opaque wrappers keeping the on-disk formats in one place.
pub struct QuenchSeriesPublic(QuenchSeries);
pub struct QuenchReportPublic(QuenchReportFile);

impl QuenchSeriesPublic {
    pub fn to_csv(&self) -> String {
        let s = &self.0;
        let mut out = String::new();
        let mut header = vec!["t".to_string()];
        header.extend(s.columns.iter().map(|(name, _)| name.clone()));
        out.push_str(&header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(","));
        out.push('\n');
        for (i, t) in s.times.iter().enumerate() {
            let mut row = vec![fmt17(*t)];
            for (_, values) in &s.columns {
                row.push(match values[i] {
                    Some(v) => fmt17(v),
                    None => "nan".into(),
                });
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String, Error> {
        #[derive(Serialize)]
        struct Column<'a> {
            name: &'a str,
            values: &'a [Option<f64>],
        }
        #[derive(Serialize)]
        struct File<'a> {
            t: &'a [f64],
            columns: Vec<Column<'a>>,
        }
        let s = &self.0;
        let file = File {
            t: &s.times,
            columns: s
                .columns
                .iter()
                .map(|(name, values)| Column { name, values })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }
}

impl QuenchReportPublic {
    pub fn to_json(&self) -> Result<String, Error> {
        Ok(serde_json::to_string_pretty(&self.0)?)
    }

    pub fn crossing_counts(&self) -> Vec<(ObservableKind, usize)> {
        self.0
            .observables
            .iter()
            .map(|e| (e.observable, e.report.classification.count()))
            .collect()
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

fn cmd_quench(args: QuenchArgs) -> Result<(), Error> {
    let cfg = merge_quench_config(&args)?;
    let (series, report) = run_quench(&cfg)?;
    let base = cfg.output.clone().ok_or_else(|| Error::Config {
        field: "output".into(),
        message: "an output base path is required (--out)".into(),
    })?;
    let series_path = match cfg.format {
        OutputFormat::Csv => base.with_extension("csv"),
        OutputFormat::Json => base.with_extension("json"),
    };
    let series_text = match cfg.format {
        OutputFormat::Csv => series.to_csv(),
        OutputFormat::Json => series.to_json()?,
    };
    write_file(&series_path, &series_text)?;
    let report_path = base.with_extension("report.json");
    write_file(&report_path, &report.to_json()?)?;
    println!("wrote {} and {}", series_path.display(), report_path.display());
    for (kind, count) in report.crossing_counts() {
        println!("{}: {} crossing(s)", kind.label(), count);
    }
    Ok(())
}

fn cmd_crossings(args: CrossingsArgs) -> Result<(), Error> {
    let (Some(d_i), Some(d_ii), Some(post)) = (
        args.experiment.d_i,
        args.experiment.d_ii,
        args.experiment.post.to_spec(),
    ) else {
        return Err(Error::Config {
            field: "experiment".into(),
            message: "need --d-i, --d-ii and a post-quench point".into(),
        });
    };
    let spec_exp = ExperimentSpec {
        d_i,
        gamma_i: args.experiment.gamma_i,
        d_ii,
        gamma_ii: args.experiment.gamma_ii,
        post,
    };
    let exp = spec_exp.resolve()?;
    let kind = parse_observable(&args.kind)?;
    let spec = eigensystem(exp.post);
    let horizon = match args.horizon {
        Some(h) => h,
        None => {
            let h = default_horizon(&spec);
            if !h.is_finite() {
                return Err(Error::Config {
                    field: "horizon".into(),
                    message: "the slowest mode does not decay here; pass an explicit horizon".into(),
                });
            }
            h
        }
    };

    #[derive(Serialize)]
    struct CrossingsOut {
        region: RegionTag,
        observable: ObservableKind,
        report: MpembaReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        grid_check: Option<MpembaReport>,
    }

    let closed = || -> Result<MpembaReport, Error> {
        let c = delta_coefficients_with(&exp, kind, &spec)?;
        crossing_times_closed_form(&c)
    };
    let report = match args.method {
        SearchMethod::ClosedForm => closed()?,
        SearchMethod::Grid => find_crossings_grid(&exp, kind, horizon, args.grid_points)?,
        SearchMethod::Auto => match closed() {
            Ok(r) => r,
            Err(Error::WrongRegion { .. }) | Err(Error::Domain(_)) | Err(Error::OffGapLine(_)) => {
                find_crossings_grid(&exp, kind, horizon, args.grid_points)?
            }
            Err(e) => return Err(e),
        },
    };
    let grid_check = if args.verify_grid && report.method == CrossingMethod::ClosedForm {
        Some(find_crossings_grid(&exp, kind, horizon, args.grid_points)?)
    } else {
        None
    };
    let out = CrossingsOut { region: spec.region, observable: kind, report, grid_check };
    let text = serde_json::to_string_pretty(&out)?;
    match &args.out {
        Some(p) => write_file(p, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn scan_thread_pool() -> Result<rayon::ThreadPool, Error> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("MPEMBA_LAB_THREADS") {
        let n: usize = v.parse().map_err(|_| Error::Config {
            field: "MPEMBA_LAB_THREADS".into(),
            message: format!("not a thread count: {v}"),
        })?;
        if n > 0 {
            builder = builder.num_threads(n);
        }
    }
    builder.build().map_err(|e| Error::Config {
        field: "MPEMBA_LAB_THREADS".into(),
        message: e.to_string(),
    })
}

fn cmd_scan(args: ScanArgs) -> Result<(), Error> {
    let post_spec = args.post.to_spec().ok_or_else(|| Error::Config {
        field: "post".into(),
        message: "a post-quench point is required".into(),
    })?;
    let post = post_spec.resolve()?;
    let kind = parse_observable(&args.kind)?;
    if !matches!(kind, ObservableKind::GroundPop | ObservableKind::Energy) {
        return Err(Error::Config {
            field: "kind".into(),
            message: "scans use the closed forms, which exist for gg and energy".into(),
        });
    }
    for (field, steps) in [("d_i_steps", args.d_i_steps), ("d_ii_steps", args.d_ii_steps)] {
        if steps < 1 {
            return Err(Error::Config { field: field.into(), message: "need at least 1 step".into() });
        }
    }
    let spec = eigensystem(post);
    let (branch_a, branch_b) = match spec.region {
        RegionTag::D | RegionTag::C => ("t_w0", "t_wm1"),
        RegionTag::B | RegionTag::E => ("t_plus", "t_minus"),
        other => {
            return Err(Error::WrongRegion {
                required: "a post-quench point with closed-form crossing times (regions D, B on the equal-gap line, or E)".into(),
                found: other,
            })
        }
    };

    let grid_value = |min: f64, max: f64, steps: usize, i: usize| -> f64 {
        if steps == 1 {
            min
        } else {
            min + (max - min) * i as f64 / (steps - 1) as f64
        }
    };

    #[derive(Clone)]
    struct Row {
        d_i: f64,
        d_ii: f64,
        count: usize,
        label: String,
        t_a: Option<f64>,
        t_b: Option<f64>,
        degenerate: bool,
    }

    let pool = scan_thread_pool()?;
    let total = args.d_i_steps * args.d_ii_steps;
    let rows: Result<Vec<Row>, Error> = pool.install(|| {
        use rayon::prelude::*;
        (0..total)
            .into_par_iter()
            .map(|idx| {
                let i = idx / args.d_ii_steps;
                let j = idx % args.d_ii_steps;
                let d_i = grid_value(args.d_i_min, args.d_i_max, args.d_i_steps, i);
                let d_ii = grid_value(args.d_ii_min, args.d_ii_max, args.d_ii_steps, j);
                let exp = QuenchExperiment::fixed_dissipation(d_i, d_ii, post)?;
                let c = delta_coefficients_with(&exp, kind, &spec)?;
                let (t_a, t_b) = match spec.region {
                    RegionTag::D | RegionTag::C => second_order_branch_roots(&c)?,
                    RegionTag::B => equal_gap_branch_roots(&c)?,
                    RegionTag::E => third_order_branch_roots(&c)?,
                    _ => unreachable!(),
                };
                let report = crossing_times_closed_form(&c)?;
                let degenerate = coefficient_scale(&c) < 1e-13;
                Ok(Row {
                    d_i,
                    d_ii,
                    count: report.classification.count(),
                    label: classification_label(&report.classification),
                    t_a,
                    t_b,
                    degenerate,
                })
            })
            .collect()
    });
    let rows = rows?;

    let text = match args.format {
        OutputFormat::Csv => {
            let mut out = String::new();
            out.push_str(&format!("d_i,d_ii,{branch_a},{branch_b},crossings,classification,degenerate\n"));
            for r in &rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    fmt17(r.d_i),
                    fmt17(r.d_ii),
                    r.t_a.map(fmt17).unwrap_or_else(|| "nan".into()),
                    r.t_b.map(fmt17).unwrap_or_else(|| "nan".into()),
                    r.count,
                    csv_field(&r.label),
                    r.degenerate,
                ));
            }
            out
        }
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct RowJson {
                d_i: f64,
                d_ii: f64,
                t_branch_a: Option<f64>,
                t_branch_b: Option<f64>,
                crossings: usize,
                classification: String,
                degenerate: bool,
            }
            #[derive(Serialize)]
            struct FileJson<'a> {
                region: RegionTag,
                observable: ObservableKind,
                branch_a: &'a str,
                branch_b: &'a str,
                rows: Vec<RowJson>,
            }
            let file = FileJson {
                region: spec.region,
                observable: kind,
                branch_a,
                branch_b,
                rows: rows
                    .iter()
                    .map(|r| RowJson {
                        d_i: r.d_i,
                        d_ii: r.d_ii,
                        t_branch_a: r.t_a,
                        t_branch_b: r.t_b,
                        crossings: r.count,
                        classification: r.label.clone(),
                        degenerate: r.degenerate,
                    })
                    .collect(),
            };
            serde_json::to_string_pretty(&file)?
        }
    };
    write_file(&args.out, &text)?;
    println!("wrote {} ({} rows)", args.out.display(), rows.len());
    Ok(())
}

fn classification_label(c: &Classification) -> String {
    match c {
        Classification::None => "none".into(),
        Classification::Single => "single".into(),
        Classification::Double => "double".into(),
        Classification::Multiple(n) => format!("multiple({n})"),
    }
}

fn coefficient_scale(c: &crate::mpemba::DeltaCoefficients) -> f64 {
    use crate::mpemba::DeltaValues;
    match c.values {
        DeltaValues::SecondOrderEp { c1, c2, c3, .. } => c1.abs().max(c2.abs()).max(c3.abs()),
        DeltaValues::EqualGapLine { alpha2, alpha3, alpha4, .. } => {
            alpha2.abs().max(alpha3.abs()).max(alpha4.abs())
        }
        DeltaValues::ThirdOrderEp { gamma0, gamma1, gamma2, .. } => {
            gamma0.abs().max(gamma1.abs()).max(gamma2.abs())
        }
        DeltaValues::Oscillatory { delta_a2, delta_a_re, delta_a_im, .. } => {
            delta_a2.abs().max(delta_a_re.hypot(delta_a_im))
        }
    }
}

/// Runs the seeded regression suite, writing one JSON line per check.
/// Returns an error if any check fails.
fn cmd_selftest(args: SelftestArgs) -> Result<(), Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut lines: Vec<String> = Vec::new();
    let mut failures = 0usize;

    #[derive(Serialize)]
    struct CheckLine<'a> {
        check: &'a str,
        detail: String,
        value: f64,
        bound: f64,
        pass: bool,
    }
    let mut push = |lines: &mut Vec<String>, failures: &mut usize, check: &str, detail: String, value: f64, bound: f64| {
        let pass = value <= bound;
        if !pass {
            *failures += 1;
        }
        let line = CheckLine { check, detail, value, bound, pass };
        lines.push(serde_json::to_string(&line).expect("selftest lines serialize"));
    };

    // Steady-state residuals at seeded parameter points.
    for _ in 0..10 {
        let d = rng.gen_range(-12.0..12.0);
        let g = rng.gen_range(0.0..30.0);
        let p = ControlParams::new(d, g).expect("finite samples");
        let residual =
            (crate::lindblad::build_lindbladian(p) * steady_state(p).as_vector()).amax();
        push(&mut lines, &mut failures, "steady_state_residual", format!("d={d} gamma={g}"), residual, 1e-12);
    }

    // Snapped special points classify as their regions.
    let checks: [(&str, ControlParams, RegionTag); 4] = [
        ("d_line", ControlParams::new(4.0, region_d_gamma(4.0)?).unwrap(), RegionTag::D),
        ("c_line", ControlParams::new(4.0, region_c_gamma(4.0)?).unwrap(), RegionTag::C),
        ("m2_line", ControlParams::new(6.0, region_b_m2_gamma(6.0)?).unwrap(), RegionTag::B),
        ("e_point", e_point(), RegionTag::E),
    ];
    for (name, p, want) in checks {
        let got = classify_region(p, DEFAULT_EP_TOL);
        push(
            &mut lines,
            &mut failures,
            "region_classification",
            format!("{name}: expected {want:?}, got {got:?}"),
            if got == want { 0.0 } else { 1.0 },
            0.0,
        );
    }

    // Analytic propagation against the RK4 oracle on random physical states.
    let posts = [
        ControlParams::new(2.5, 0.5).unwrap(),
        ControlParams::new(1.0, 10.0).unwrap(),
        ControlParams::new(6.0, region_b_m2_gamma(6.0)?).unwrap(),
        ControlParams::new(4.0, region_d_gamma(4.0)?).unwrap(),
        ControlParams::new(4.0, region_c_gamma(4.0)?).unwrap(),
        e_point(),
    ];
    for post in posts {
        let rho0 = random_physical_state(&mut rng, 0.98);
        let exact = Propagator::new(post).propagate(&rho0, 1.0)?;
        let oracle = propagate_rk4(&rho0, post, 1.0, DEFAULT_RK4_DT)?;
        push(
            &mut lines,
            &mut failures,
            "analytic_vs_rk4",
            format!("post=({}, {})", post.d_tilde, post.gamma_tilde),
            exact.sup_distance(&oracle),
            1e-8,
        );
    }

    // Closed-form double crossings at the reference experiments.
    let reference: [(&str, QuenchExperiment, usize); 3] = [
        (
            "second_order_double",
            QuenchExperiment::fixed_dissipation(
                10.0,
                12.0,
                ControlParams::new(4.0, region_d_gamma(4.0)?).unwrap(),
            )?,
            2,
        ),
        (
            "equal_gap_double",
            QuenchExperiment::fixed_dissipation(
                16.3,
                13.4,
                ControlParams::new(6.0, region_b_m2_gamma(6.0)?).unwrap(),
            )?,
            2,
        ),
        ("third_order_double", QuenchExperiment::fixed_dissipation(5.0, 7.0, e_point())?, 2),
    ];
    for (name, exp, expected) in reference {
        let spec = eigensystem(exp.post);
        let c = delta_coefficients_with(&exp, ObservableKind::GroundPop, &spec)?;
        let report = crossing_times_closed_form(&c)?;
        let detail = format!(
            "{name}: times {:?}",
            report.crossings.iter().map(|c| c.time).collect::<Vec<_>>()
        );
        push(
            &mut lines,
            &mut failures,
            "closed_form_crossings",
            detail,
            (report.classification.count() as f64 - expected as f64).abs(),
            0.0,
        );
    }

    // Oscillatory-region criterion and multiplicity.
    {
        let exp = QuenchExperiment::fixed_dissipation(
            2.1,
            0.51,
            ControlParams::new(2.5, 0.5).unwrap(),
        )?;
        let spec = eigensystem(exp.post);
        let c = delta_coefficients_with(&exp, ObservableKind::GroundPop, &spec)?;
        let criterion = region_a1_criterion(&c)?;
        push(
            &mut lines,
            &mut failures,
            "oscillatory_criterion",
            "reference oscillatory quench".into(),
            if criterion { 0.0 } else { 1.0 },
            0.0,
        );
        let horizon = default_horizon(&spec);
        let grid = find_crossings_grid(&exp, ObservableKind::GroundPop, horizon, 2000)?;
        push(
            &mut lines,
            &mut failures,
            "oscillatory_multiplicity",
            format!("{} crossings", grid.classification.count()),
            if grid.classification.count() >= 3 { 0.0 } else { 1.0 },
            0.0,
        );
    }

    // Lambert W defining identity on seeded points.
    for _ in 0..50 {
        let x = 10f64.powf(rng.gen_range(-6.0..6.0));
        let w = lambert_w(WBranch::W0, x)?;
        push(&mut lines, &mut failures, "lambert_w0_identity", format!("x={x}"), (w * w.exp() - x).abs() / x, 1e-14);
        let y = -rng.gen_range(1e-8..(-crate::lambertw::branch_point()) * 0.999_999);
        for (name, branch) in [("w0", WBranch::W0), ("wm1", WBranch::Wm1)] {
            let w = lambert_w(branch, y)?;
            push(
                &mut lines,
                &mut failures,
                "lambert_negative_identity",
                format!("{name} x={y}"),
                (w * w.exp() - y).abs() / y.abs(),
                1e-14,
            );
        }
    }

    let mut contents = lines.join("\n");
    contents.push('\n');
    write_file(&args.out, &contents)?;
    println!(
        "selftest: {} checks, {} failure(s); report at {}",
        lines.len(),
        failures,
        args.out.display()
    );
    if failures > 0 {
        return Err(Error::Domain(format!("selftest reported {failures} failing check(s)")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_config() -> RunConfig {
        RunConfig {
            experiment: ExperimentSpec {
                d_i: 10.0,
                gamma_i: None,
                d_ii: 12.0,
                gamma_ii: None,
                post: PostSpec { d: Some(4.0), gamma: GammaSpec::FromDLine },
            },
            observables: vec![ObservableKind::GroundPop, ObservableKind::Energy],
            horizon: None,
            grid_points: 400,
            method: SearchMethod::Auto,
            format: OutputFormat::Csv,
            seed: 7,
            output: None,
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = reference_config();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let text = r#"{"experiment":{"d_i":1.0,"d_ii":2.0,"post":{"d":4.0,"gamma":{"value":2.0}}},"bogus":1}"#;
        assert!(serde_json::from_str::<RunConfig>(text).is_err());
    }

    #[test]
    fn csv_and_json_series_agree() {
        let mut cfg = reference_config();
        cfg.grid_points = 50;
        let (series, _) = run_quench(&cfg).unwrap();
        let csv = series.to_csv();
        let json: serde_json::Value = serde_json::from_str(&series.to_json().unwrap()).unwrap();
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let rows: Vec<Vec<f64>> = lines
            .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap_or(f64::NAN)).collect())
            .collect();
        let t_json = json["t"].as_array().unwrap();
        assert_eq!(rows.len(), t_json.len());
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), header.len());
            assert_eq!(row[0], t_json[i].as_f64().unwrap());
        }
        for (j, col) in json["columns"].as_array().unwrap().iter().enumerate() {
            assert_eq!(col["name"].as_str().unwrap(), header[j + 1]);
            for (i, v) in col["values"].as_array().unwrap().iter().enumerate() {
                match v.as_f64() {
                    Some(x) => assert_eq!(x, rows[i][j + 1], "mismatch at row {i} col {j}"),
                    None => assert!(rows[i][j + 1].is_nan()),
                }
            }
        }
    }

    #[test]
    fn quench_reports_double_crossings_at_the_reference_point() {
        let cfg = reference_config();
        let (_, report) = run_quench(&cfg).unwrap();
        for (kind, count) in report.crossing_counts() {
            assert_eq!(count, 2, "expected a double crossing in {kind:?}");
        }
    }

    #[test]
    fn post_spec_snaps() {
        let e = PostSpec { d: None, gamma: GammaSpec::SnapE }.resolve().unwrap();
        assert_eq!(classify_region(e, DEFAULT_EP_TOL), RegionTag::E);
        let d = PostSpec { d: Some(4.0), gamma: GammaSpec::FromDLine }.resolve().unwrap();
        assert_eq!(classify_region(d, DEFAULT_EP_TOL), RegionTag::D);
        assert!(PostSpec { d: None, gamma: GammaSpec::Value(1.0) }.resolve().is_err());
        assert!(matches!(
            PostSpec { d: Some(1.0), gamma: GammaSpec::FromDLine }.resolve(),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn observable_labels_parse() {
        for kind in ObservableKind::ALL {
            assert_eq!(parse_observable(kind.label()).unwrap(), kind);
        }
        assert!(parse_observable("nonsense").is_err());
    }

    #[test]
    fn fmt17_round_trips() {
        for x in [1.0 / 3.0, 2.0_f64.sqrt(), 1e-300, -4.567e250, 0.0] {
            let s = fmt17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "fmt17 not lossless for {x}");
        }
        assert_eq!(fmt17(f64::NAN), "nan");
        assert_eq!(fmt17(f64::INFINITY), "inf");
    }
}
