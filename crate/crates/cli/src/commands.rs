//! One function per subcommand. Each returns a JSON payload and, when a gate
//! fails after the payload was computed, the error that sets the exit code.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use qpmc_core::diagnostics::{delta_vertical_from, graph_gradient_bound};
use qpmc_core::foliation::{
    center_of_mass_core, diffeo_check, sweep, DiffeoReport, Foliation, FoliationLeaf, SweepBox,
    SweepConfig, SweepFailure, FOLIATION_SCHEMA,
};
use qpmc_core::metric::spec::CATALOG;
use qpmc_core::solver::{newton_solve, residual, uniqueness_probe};
use qpmc_core::spectrum::{leaf_spectrum, pmc_defect, q_projector};
use qpmc_core::variation::{check_formulas, Formula, VariationConfig, VariationFamily};
use qpmc_core::{compute_geometry, GraphLeaf, MetricField, QpmcError};

use crate::config::{CommandKind, RunConfig};
use crate::record::{metric_files, sha256_file, to_json, write_file, RunRecord, Status, Timing, RECORD_SCHEMA};
use crate::CliError;

pub const INDEX_FILE: &str = "index.json";

type Outcome = (Value, Option<CliError>);

/// Runs the command and wraps the outcome in a record. Never panics on bad
/// input; failures land in `status`.
pub fn execute(cfg: &RunConfig) -> RunRecord {
    let start = Instant::now();
    let mut hashes = BTreeMap::new();
    let result = collect_hashes(cfg, &mut hashes).and_then(|_| dispatch(cfg, &mut hashes));
    let (payload, err) = match result {
        Ok(o) => o,
        Err(e) => (Value::Null, Some(e)),
    };
    RunRecord {
        schema_version: RECORD_SCHEMA,
        tool: "qpmc".into(),
        version: cfg.version.clone(),
        config: cfg.clone(),
        input_hashes: hashes,
        timing: Timing {
            wall_seconds: start.elapsed().as_secs_f64(),
        },
        status: Status {
            exit_code: err.as_ref().map_or(0, |e| e.exit_code()),
            error: err.map(|e| e.to_string()),
        },
        payload,
    }
}

fn hash_into(path: &Path, hashes: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    hashes.insert(path.display().to_string(), sha256_file(path)?);
    Ok(())
}

fn collect_hashes(cfg: &RunConfig, hashes: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    for p in [&cfg.config_file, &cfg.leaf, &cfg.init].into_iter().flatten() {
        hash_into(p, hashes)?;
    }
    for p in metric_files(&cfg.metric) {
        hash_into(Path::new(p), hashes)?;
    }
    Ok(())
}

fn dispatch(cfg: &RunConfig, hashes: &mut BTreeMap<String, String>) -> Result<Outcome, CliError> {
    match cfg.command {
        CommandKind::Spectrum => spectrum(cfg),
        CommandKind::SolveLeaf => solve_leaf(cfg),
        CommandKind::Foliate => foliate(cfg),
        CommandKind::Core => core(cfg, hashes),
        CommandKind::VerifyVariations => verify_variations(cfg),
        CommandKind::Examples => Ok((examples(), None)),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("payload serializes")
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

/// Reads a leaf from a leaf JSON, a solve-leaf payload or record, a
/// foliation leaf file, or a CSV written by `--csv`.
pub fn load_leaf(path: &Path, cfg: &RunConfig) -> Result<GraphLeaf, CliError> {
    let text = read_text(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return Ok(GraphLeaf::read_csv(&text, cfg.mode)?);
    }
    let v: Value = serde_json::from_str(&text).map_err(QpmcError::from)?;
    let candidates = [
        &v,
        &v["leaf"],
        &v["solution"]["leaf"],
        &v["payload"]["solution"]["leaf"],
    ];
    for c in candidates {
        if c.is_object() {
            if let Ok(leaf) = serde_json::from_value::<GraphLeaf>(c.clone()) {
                return Ok(leaf);
            }
        }
    }
    Err(QpmcError::InvalidInput(format!("{} holds no leaf", path.display())).into())
}

fn check_leaf_k(leaf: &GraphLeaf, m: &MetricField) -> Result<(), CliError> {
    if leaf.k() != m.k() {
        return Err(QpmcError::InvalidInput(format!("leaf has k = {}, metric has k = {}", leaf.k(), m.k())).into());
    }
    Ok(())
}

fn origin_or_z(cfg: &RunConfig) -> Vec<f64> {
    cfg.z.clone().unwrap_or_else(|| vec![0.0; cfg.metric_field().k()])
}

fn spectrum(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let m = cfg.metric_field();
    let leaf = match &cfg.leaf {
        Some(p) => load_leaf(p, cfg)?,
        None => GraphLeaf::slice(origin_or_z(cfg), cfg.grid()),
    };
    check_leaf_k(&leaf, m)?;
    let geom = compute_geometry(m, &leaf)?;
    let ls = leaf_spectrum(&geom)?;
    let count = cfg.count.unwrap_or(8).min(ls.spectrum.eigenvalues.len());
    let q = q_projector(&ls.spectrum, cfg.solver.rule, cfg.solver.gap_tol);
    let payload = json!({
        "k": leaf.k(),
        "n": leaf.grid.n,
        "z": leaf.z,
        "eigenvalues": &ls.spectrum.eigenvalues[..count],
        "gap": ls.spectrum.gap(),
        "rule": cfg.solver.rule,
        "rank_q": q.as_ref().ok().map(|q| q.rank),
        "skew_defect": ls.connection.skew_defect,
        "pmc_defect": pmc_defect(&geom, &ls.connection),
    });
    Ok((payload, q.err().map(CliError::from)))
}

#[derive(Serialize)]
struct ResidualSummary {
    l2: f64,
    sup: f64,
    means: Vec<f64>,
    qpmc_defect: f64,
}

fn solve_leaf(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let m = cfg.metric_field();
    let z = origin_or_z(cfg);
    let grid = cfg.grid();
    let init = match &cfg.init {
        Some(p) => {
            let l = load_leaf(p, cfg)?;
            check_leaf_k(&l, m)?;
            if l.grid != grid {
                return Err(QpmcError::InvalidInput("initial guess grid differs from --n/--mode".into()).into());
            }
            Some(l.rebased(&z).u)
        }
        None => None,
    };
    let sol = newton_solve(m, &z, grid, &cfg.solver, init.as_deref())?;
    let res = residual(m, &sol.leaf, &cfg.solver)?;
    let geom = compute_geometry(m, &sol.leaf)?;
    let ls = leaf_spectrum(&geom)?;
    let delta = delta_vertical_from(&geom, &ls.connection, cfg.r_bar);
    let gradient = graph_gradient_bound(m, &sol.leaf)?;
    let probe = match cfg.probe {
        Some((trials, radius)) => Some(uniqueness_probe(m, &z, grid, &cfg.solver, trials, radius, cfg.seed)?),
        None => None,
    };
    if let Some(p) = &cfg.csv {
        let mut buf = Vec::new();
        sol.leaf.write_csv(&mut buf)?;
        write_file(p, &String::from_utf8(buf).expect("csv is utf-8"))?;
    }
    let failure = probe.as_ref().and_then(|p| {
        (p.failures > 0 || p.spread > 1e-8).then(|| {
            CliError::Verification(format!(
                "uniqueness probe: spread {:e}, {} failed restarts",
                p.spread, p.failures
            ))
        })
    });
    let payload = json!({
        "solution": sol,
        "residual": ResidualSummary { l2: res.l2, sup: res.sup, means: res.means, qpmc_defect: res.qpmc_defect },
        "pmc_defect": pmc_defect(&geom, &ls.connection),
        "delta": delta,
        "gradient_bound": gradient,
        "probe": probe,
    });
    Ok((payload, failure))
}

/// One entry of the foliation index.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndexEntry {
    pub index: Vec<usize>,
    pub z: Vec<f64>,
    pub file: String,
    pub sup_norm: f64,
    pub residual: f64,
}

/// Payload of `index.json`; leaves live in their own files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoliationIndex {
    pub schema_version: u32,
    pub metric: String,
    pub bounds: SweepBox,
    pub config: SweepConfig,
    pub leaves: Vec<IndexEntry>,
    pub failures: Vec<SweepFailure>,
    pub diffeo: Option<DiffeoReport>,
}

fn leaf_file_name(index: &[usize]) -> String {
    let parts: Vec<String> = index.iter().map(|i| format!("{i:04}")).collect();
    format!("leaf_{}.json", parts.join("_"))
}

fn run_sweep(cfg: &RunConfig) -> Result<Foliation, CliError> {
    let m = cfg.metric_field();
    let bounds = cfg.bounds.as_ref().expect("box validated");
    if bounds.k() != m.k() {
        return Err(QpmcError::InvalidInput(format!("box has k = {}, metric has k = {}", bounds.k(), m.k())).into());
    }
    let sc = SweepConfig {
        dz: cfg.dz.expect("dz validated"),
        grid: cfg.grid(),
        solver: cfg.solver.clone(),
        r_bar: cfg.r_bar,
    };
    Ok(sweep(m, bounds, &sc)?)
}

fn diffeo_failure(d: &DiffeoReport) -> Option<CliError> {
    (!d.pass).then(|| {
        CliError::Verification(format!(
            "foliation map not injective: margin {:e} < {:e} or separation {:e}",
            d.margin, d.required_margin, d.min_separation
        ))
    })
}

fn foliate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let dir = cfg.out_dir.as_ref().expect("out_dir validated");
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let f = run_sweep(cfg)?;
    let diffeo = diffeo_check(&f)?;
    let mut entries = Vec::with_capacity(f.leaves.len());
    for l in &f.leaves {
        let file = leaf_file_name(&l.index);
        write_file(&dir.join(&file), &to_json(l))?;
        entries.push(IndexEntry {
            index: l.index.clone(),
            z: l.z.clone(),
            file,
            sup_norm: l.solution.sup_norm,
            residual: l.solution.residual(),
        });
    }
    let failure = diffeo_failure(&diffeo);
    let index = FoliationIndex {
        schema_version: FOLIATION_SCHEMA,
        metric: f.metric.clone(),
        bounds: f.bounds.clone(),
        config: f.config.clone(),
        leaves: entries,
        failures: f.failures.clone(),
        diffeo: Some(diffeo),
    };
    let payload = to_value(&index);
    let record = RunRecord {
        schema_version: RECORD_SCHEMA,
        tool: "qpmc".into(),
        version: cfg.version.clone(),
        config: cfg.clone(),
        input_hashes: BTreeMap::new(),
        timing: Timing { wall_seconds: 0.0 },
        status: Status {
            exit_code: failure.as_ref().map_or(0, |e| e.exit_code()),
            error: failure.as_ref().map(|e| e.to_string()),
        },
        payload: payload.clone(),
    };
    write_file(&dir.join(INDEX_FILE), &to_json(&record))?;
    Ok((payload, failure))
}

/// Reads a directory written by `foliate` back into a [`Foliation`].
pub fn load_foliation(dir: &Path, hashes: &mut BTreeMap<String, String>) -> Result<(MetricField, Foliation), CliError> {
    let index_path = dir.join(INDEX_FILE);
    hash_into(&index_path, hashes)?;
    let v: Value = serde_json::from_str(&read_text(&index_path)?).map_err(QpmcError::from)?;
    let body = if v.get("payload").is_some() { v["payload"].clone() } else { v };
    let index: FoliationIndex = serde_json::from_value(body).map_err(QpmcError::from)?;
    let m = MetricField::parse(&index.metric)?;
    let mut leaves = Vec::with_capacity(index.leaves.len());
    for e in &index.leaves {
        let p: PathBuf = dir.join(&e.file);
        hash_into(&p, hashes)?;
        let l: FoliationLeaf = serde_json::from_str(&read_text(&p)?).map_err(QpmcError::from)?;
        leaves.push(l);
    }
    leaves.sort_by(|a, b| a.index.cmp(&b.index));
    let f = Foliation {
        schema_version: index.schema_version,
        metric: index.metric,
        bounds: index.bounds,
        config: index.config,
        leaves,
        failures: index.failures,
    };
    Ok((m, f))
}

fn core(cfg: &RunConfig, hashes: &mut BTreeMap<String, String>) -> Result<Outcome, CliError> {
    let (m, f) = match &cfg.from {
        Some(dir) => load_foliation(dir, hashes)?,
        None => (cfg.metric_field().clone(), run_sweep(cfg)?),
    };
    let samples = center_of_mass_core(&m, &f)?;
    if let Some(p) = &cfg.csv {
        let k = f.k();
        let mut header: Vec<String> = (1..=k).map(|a| format!("z{a}")).collect();
        header.extend((1..=k).map(|a| format!("c{a}")));
        header.push("cx".into());
        let mut text = header.join(",") + "\n";
        for s in &samples {
            let cells: Vec<String> = s.z.iter().chain(&s.centroid).map(|v| format!("{v:?}")).collect();
            text += &cells.join(",");
            text.push('\n');
        }
        write_file(p, &text)?;
    }
    let payload = json!({
        "metric": f.metric,
        "leaves": f.leaves.len(),
        "samples": samples,
    });
    Ok((payload, None))
}

fn verify_variations(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let m = cfg.metric_field();
    let leaf = match &cfg.leaf {
        Some(p) => load_leaf(p, cfg)?,
        None => newton_solve(m, &origin_or_z(cfg), cfg.grid(), &cfg.solver, None)?.leaf,
    };
    check_leaf_k(&leaf, m)?;
    let vc = VariationConfig {
        rule: cfg.solver.rule,
        gap_tol: cfg.solver.gap_tol,
        ..VariationConfig::default()
    };
    let fam = VariationFamily::seeded(m, &leaf, cfg.seed, cfg.amplitude, vc)?;
    let formulas = cfg.formulas.clone().unwrap_or_else(|| Formula::ALL.to_vec());
    let reports = check_formulas(m, &fam, &formulas, cfg.seed)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.formula.id()).collect();
    let failure = (!failed.is_empty()).then(|| CliError::Verification(format!("formulas failed: {}", failed.join(", "))));
    Ok((to_value(&reports), failure))
}

fn examples() -> Value {
    Value::Array(
        CATALOG
            .iter()
            .map(|(name, example)| json!({ "name": name, "example": example }))
            .collect(),
    )
}
