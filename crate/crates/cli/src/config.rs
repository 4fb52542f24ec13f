//! Command-line flags, the optional TOML config file, and their merge into
//! a validated [`RunConfig`].

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use qpmc_core::foliation::SweepBox;
use qpmc_core::grid::DEFAULT_NODES;
use qpmc_core::solver::{JacobianMode, SolverConfig};
use qpmc_core::variation::Formula;
use qpmc_core::{CutoffRule, DiffMode, FiberGrid, MetricField};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "qpmc", version, about = "QPMC leaves and foliations of near-product cylinders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normal Laplacian spectrum of a leaf.
    Spectrum {
        #[command(flatten)]
        common: CommonArgs,
        /// Leaf offset, comma separated (default: origin).
        #[arg(long, allow_hyphen_values = true)]
        z: Option<String>,
        /// Leaf JSON file; replaces --z.
        #[arg(long)]
        leaf: Option<PathBuf>,
        /// Number of eigenvalues to report.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Newton solve for the QPMC leaf over one base point.
    SolveLeaf {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, allow_hyphen_values = true)]
        z: Option<String>,
        /// Initial guess (leaf JSON).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Also write the solved leaf as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        r_bar: Option<f64>,
        /// Number of random restarts for the uniqueness probe.
        #[arg(long)]
        probe_trials: Option<usize>,
        #[arg(long)]
        probe_radius: Option<f64>,
    },
    /// Sweep the solver over a lattice and write one JSON per leaf.
    Foliate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// `lo,hi` for every axis or `lo1,hi1;lo2,hi2`.
        #[arg(long = "box", allow_hyphen_values = true)]
        bounds: Option<String>,
        #[arg(long)]
        dz: Option<f64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        r_bar: Option<f64>,
    },
    /// Leaf centroids of a foliation as CSV.
    Core {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long = "box", allow_hyphen_values = true)]
        bounds: Option<String>,
        #[arg(long)]
        dz: Option<f64>,
        /// Directory written by `foliate`; replaces a fresh sweep.
        #[arg(long)]
        from: Option<PathBuf>,
        /// CSV destination (default: stdout).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check the first-variation formulas against finite differences.
    VerifyVariations {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        leaf: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        z: Option<String>,
        /// Comma-separated formula ids (default: all).
        #[arg(long)]
        formulas: Option<String>,
        /// Sup norm of the seeded velocity field.
        #[arg(long)]
        amplitude: Option<f64>,
    },
    /// Print the builtin metric catalog.
    Examples {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with defaults for any flag of this subcommand.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub metric: Option<String>,
    /// Fiber nodes (power of two, at least 16).
    #[arg(long)]
    pub n: Option<usize>,
    /// `trig` or `fd4`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Destination of the run record (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `threshold` or `order`.
    #[arg(long)]
    pub rule: Option<String>,
    #[arg(long)]
    pub gap_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    /// `laplacian_preconditioner` or `fd_jacobian`.
    #[arg(long)]
    pub jacobian: Option<String>,
    #[arg(long)]
    pub fd_step: Option<f64>,
}

/// Every configurable key; flags and the config file both fill it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub metric: Option<String>,
    pub n: Option<usize>,
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub rule: Option<String>,
    pub gap_tol: Option<f64>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub damping: Option<f64>,
    pub jacobian: Option<String>,
    pub fd_step: Option<f64>,
    pub z: Option<String>,
    pub leaf: Option<PathBuf>,
    pub count: Option<usize>,
    pub init: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub r_bar: Option<f64>,
    pub probe_trials: Option<usize>,
    pub probe_radius: Option<f64>,
    #[serde(rename = "box")]
    pub bounds: Option<String>,
    pub dz: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub from: Option<PathBuf>,
    pub formulas: Option<String>,
    pub amplitude: Option<f64>,
}

macro_rules! merge_fields {
    ($a:ident, $b:ident, $($f:ident),*) => {
        Settings { $($f: $a.$f.or($b.$f)),* }
    };
}

macro_rules! set_keys {
    ($s:ident, $($f:ident),*) => {{
        let mut v: Vec<&'static str> = Vec::new();
        $(if $s.$f.is_some() { v.push(stringify!($f)); })*
        v
    }};
}

impl Settings {
    /// Field-wise `self` over `file`.
    fn over(self, file: Settings) -> Settings {
        merge_fields!(
            self, file, metric, n, mode, seed, out, rule, gap_tol, tol, max_iters, damping,
            jacobian, fd_step, z, leaf, count, init, csv, r_bar, probe_trials, probe_radius,
            bounds, dz, out_dir, from, formulas, amplitude
        )
    }

    fn keys(&self) -> Vec<&'static str> {
        let s = self;
        set_keys!(
            s, metric, n, mode, seed, out, rule, gap_tol, tol, max_iters, damping, jacobian,
            fd_step, z, leaf, count, init, csv, r_bar, probe_trials, probe_radius, bounds, dz,
            out_dir, from, formulas, amplitude
        )
        .into_iter()
        .map(|k| if k == "bounds" { "box" } else { k })
        .collect()
    }

    fn with_common(mut self, c: CommonArgs) -> Self {
        self.metric = c.metric;
        self.n = c.n;
        self.mode = c.mode;
        self.seed = c.seed;
        self.out = c.out;
        self.rule = c.rule;
        self.gap_tol = c.gap_tol;
        self
    }

    fn with_solver(mut self, s: SolverArgs) -> Self {
        self.tol = s.tol;
        self.max_iters = s.max_iters;
        self.damping = s.damping;
        self.jacobian = s.jacobian;
        self.fd_step = s.fd_step;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Spectrum,
    SolveLeaf,
    Foliate,
    Core,
    VerifyVariations,
    Examples,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Spectrum => "spectrum",
            CommandKind::SolveLeaf => "solve-leaf",
            CommandKind::Foliate => "foliate",
            CommandKind::Core => "core",
            CommandKind::VerifyVariations => "verify-variations",
            CommandKind::Examples => "examples",
        }
    }

    fn allowed(self) -> Vec<&'static str> {
        let common = ["metric", "n", "mode", "seed", "out", "rule", "gap_tol"];
        let solver = ["tol", "max_iters", "damping", "jacobian", "fd_step"];
        let with_solver = |extra: &[&'static str]| -> Vec<&'static str> {
            common.iter().chain(&solver).chain(extra).copied().collect()
        };
        match self {
            CommandKind::Spectrum => common.iter().chain(&["z", "leaf", "count"]).copied().collect(),
            CommandKind::SolveLeaf => {
                with_solver(&["z", "init", "csv", "r_bar", "probe_trials", "probe_radius"])
            }
            CommandKind::Foliate => with_solver(&["box", "dz", "out_dir", "r_bar"]),
            CommandKind::Core => with_solver(&["box", "dz", "from", "csv"]),
            CommandKind::VerifyVariations => with_solver(&["leaf", "z", "formulas", "amplitude"]),
            CommandKind::Examples => vec!["out"],
        }
    }
}

/// A fully validated run description; echoed into every record.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: CommandKind,
    /// Canonical metric spec.
    pub metric: String,
    pub n: usize,
    pub mode: DiffMode,
    pub seed: u64,
    pub solver: SolverConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leaf: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    pub r_bar: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<(usize, f64)>,
    #[serde(rename = "box", skip_serializing_if = "Option::is_none")]
    pub bounds: Option<SweepBox>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formulas: Option<Vec<Formula>>,
    pub amplitude: f64,
    #[serde(skip)]
    pub config_file: Option<PathBuf>,
    pub version: String,
    /// Parsed metric; not serialized.
    #[serde(skip)]
    pub metric_field: Option<MetricField>,
}

impl RunConfig {
    pub fn grid(&self) -> FiberGrid {
        FiberGrid::new(self.n, self.mode).expect("grid validated")
    }

    pub fn metric_field(&self) -> &MetricField {
        self.metric_field.as_ref().expect("metric parsed during validation")
    }
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

pub fn parse_list(name: &str, text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Config(format!("{name}: `{s}` is not a finite number")))
        })
        .collect()
}

fn read_file_settings(path: &Path) -> Result<Settings, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("config {}: {}", path.display(), e.message())))
}

/// Turns parsed flags into a validated config; flags override the file.
pub fn resolve(cli: Cli) -> Result<RunConfig, CliError> {
    let (kind, common, flags) = match cli.command {
        Command::Spectrum { common, z, leaf, count } => {
            let s = Settings { z, leaf, count, ..Default::default() };
            (CommandKind::Spectrum, common, s)
        }
        Command::SolveLeaf { common, solver, z, init, csv, r_bar, probe_trials, probe_radius } => {
            let s = Settings { z, init, csv, r_bar, probe_trials, probe_radius, ..Default::default() }
                .with_solver(solver);
            (CommandKind::SolveLeaf, common, s)
        }
        Command::Foliate { common, solver, bounds, dz, out_dir, r_bar } => {
            let s = Settings { bounds, dz, out_dir, r_bar, ..Default::default() }.with_solver(solver);
            (CommandKind::Foliate, common, s)
        }
        Command::Core { common, solver, bounds, dz, from, csv } => {
            let s = Settings { bounds, dz, from, csv, ..Default::default() }.with_solver(solver);
            (CommandKind::Core, common, s)
        }
        Command::VerifyVariations { common, solver, leaf, z, formulas, amplitude } => {
            let s = Settings { leaf, z, formulas, amplitude, ..Default::default() }.with_solver(solver);
            (CommandKind::VerifyVariations, common, s)
        }
        Command::Examples { out } => {
            let common = CommonArgs { out, ..Default::default() };
            (CommandKind::Examples, common, Settings::default())
        }
    };
    let config_file = common.config.clone();
    let flags = flags.with_common(common);
    let file = match &config_file {
        Some(p) => read_file_settings(p)?,
        None => Settings::default(),
    };
    if let Some(bad) = file.keys().into_iter().find(|k| !kind.allowed().contains(k)) {
        return Err(CliError::Config(format!(
            "config key `{bad}` does not apply to `{}`",
            kind.name()
        )));
    }
    build(kind, flags.over(file), config_file)
}

fn build(kind: CommandKind, s: Settings, config_file: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let cfg_err = |e: qpmc_core::QpmcError| CliError::Config(e.to_string());
    let n = s.n.unwrap_or(DEFAULT_NODES);
    let mode: DiffMode = match &s.mode {
        Some(m) => m.parse().map_err(cfg_err)?,
        None => DiffMode::default(),
    };
    FiberGrid::new(n, mode).map_err(cfg_err)?;

    let mut solver = SolverConfig::default();
    if let Some(r) = &s.rule {
        solver.rule = r.parse::<CutoffRule>().map_err(cfg_err)?;
    }
    if let Some(v) = s.gap_tol {
        solver.gap_tol = positive("gap_tol", v)?;
    }
    if let Some(v) = s.tol {
        solver.tol_residual = positive("tol", v)?;
    }
    if let Some(v) = s.max_iters {
        solver.max_iters = v;
    }
    if let Some(v) = s.damping {
        solver.damping = positive("damping", v)?;
    }
    if let Some(j) = &s.jacobian {
        solver.jacobian = j.parse::<JacobianMode>().map_err(cfg_err)?;
    }
    if let Some(v) = s.fd_step {
        solver.fd_jacobian_step = positive("fd_step", v)?;
    }
    solver.validate().map_err(cfg_err)?;

    let needs_metric = !matches!(kind, CommandKind::Examples)
        && !(kind == CommandKind::Core && s.from.is_some());
    if kind == CommandKind::Core && s.from.is_some() && (s.metric.is_some() || s.bounds.is_some() || s.dz.is_some()) {
        return Err(CliError::Config(
            "--from reads metric, box and dz from the foliation index; drop --metric/--box/--dz".into(),
        ));
    }
    let metric_field = match (&s.metric, needs_metric) {
        (Some(spec), _) => Some(MetricField::parse(spec).map_err(cfg_err)?),
        (None, true) => return Err(CliError::Config(format!("`{}` needs --metric", kind.name()))),
        (None, false) => None,
    };
    let k = metric_field.as_ref().map(|m| m.k());

    let z = match &s.z {
        Some(t) => {
            let z = parse_list("z", t)?;
            if Some(z.len()) != k {
                return Err(CliError::Config(format!(
                    "--z has {} components, metric has k = {}",
                    z.len(),
                    k.unwrap_or(0)
                )));
            }
            Some(z)
        }
        None => None,
    };
    if s.leaf.is_some() && s.z.is_some() {
        return Err(CliError::Config("give either --leaf or --z, not both".into()));
    }
    if let Some(c) = s.count {
        if c == 0 {
            return Err(CliError::Config("count must be positive".into()));
        }
    }
    let r_bar = positive("r_bar", s.r_bar.unwrap_or(1.0))?;
    let amplitude = positive("amplitude", s.amplitude.unwrap_or(qpmc_core::variation::DEFAULT_AMPLITUDE))?;
    let probe = match (s.probe_trials, s.probe_radius) {
        (None, None) => None,
        (t, r) => {
            let t = t.unwrap_or(8);
            if t == 0 {
                return Err(CliError::Config("probe_trials must be positive".into()));
            }
            Some((t, positive("probe_radius", r.unwrap_or(0.05))?))
        }
    };

    let sweeping = matches!(kind, CommandKind::Foliate) || (kind == CommandKind::Core && s.from.is_none());
    let dz = match s.dz {
        Some(v) => Some(positive("dz", v)?),
        None if sweeping => return Err(CliError::Config(format!("`{}` needs --dz", kind.name()))),
        None => None,
    };
    let bounds = match &s.bounds {
        Some(b) => Some(SweepBox::parse(b, k.unwrap_or(1)).map_err(cfg_err)?),
        None if sweeping => return Err(CliError::Config(format!("`{}` needs --box", kind.name()))),
        None => None,
    };
    if kind == CommandKind::Foliate && s.out_dir.is_none() {
        return Err(CliError::Config("`foliate` needs --out-dir".into()));
    }
    let formulas = match &s.formulas {
        Some(t) => Some(
            t.split(',')
                .map(|f| f.trim().parse::<Formula>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(cfg_err)?,
        ),
        None => None,
    };

    Ok(RunConfig {
        command: kind,
        metric: metric_field
            .as_ref()
            .map(|m| m.provenance().to_string())
            .unwrap_or_default(),
        n,
        mode,
        seed: s.seed.unwrap_or(0),
        solver,
        out: s.out,
        z,
        leaf: s.leaf,
        count: s.count,
        init: s.init,
        csv: s.csv,
        r_bar,
        probe,
        bounds,
        dz,
        out_dir: s.out_dir,
        from: s.from,
        formulas,
        amplitude,
        config_file,
        version: env!("CARGO_PKG_VERSION").to_string(),
        metric_field,
    })
}

/// Parses an argument vector (including the program name).
pub fn parse_config<I, T>(args: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(CliError::Usage)?;
    resolve(cli)
}
