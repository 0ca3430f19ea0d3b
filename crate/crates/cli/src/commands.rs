use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde_json::{json, Map, Value};

use soid::asymptotics::{
    classify_regime, projections, quantile_sorted, simulate_limit, sorted, write_draws_csv, RegimeReport,
};
use soid::estimator::estimate;
use soid::linalg;
use soid::models::{Ar1Moments, PanelAr1Config};
use soid::moments::{jacobian, numeric_derivative_bundle, score_covariance, BundleFile, Dataset};
use soid::montecarlo::{binomial_se, reference_point, run_plan, McReport, ModelConfig, ReferencePoint, SCHEMA_VERSION};

use crate::config::RunConfig;
use crate::failure::{Failure, EXIT_DEGENERATE, EXIT_ESTIMATION};

pub const QUANTILE_LEVELS: [f64; 11] = [1.0, 2.5, 5.0, 10.0, 25.0, 50.0, 75.0, 90.0, 95.0, 97.5, 99.0];

/// Output directory plus the files written so far.
pub struct Outputs {
    dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Outputs {
    pub fn create(dir: PathBuf) -> Result<Self, Failure> {
        std::fs::create_dir_all(&dir)
            .map_err(|e| Failure::config(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self { dir, written: Vec::new() })
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>, Failure> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    fn io<T>(r: std::io::Result<T>) -> Result<T, Failure> {
        r.map_err(|e| Failure::config(format!("write failed: {e}")))
    }

    pub fn json(&mut self, name: &str, value: &Value) -> Result<(), Failure> {
        let mut w = self.open(name)?;
        let text = serde_json::to_string_pretty(value).expect("JSON values serialize");
        Self::io(writeln!(w, "{text}").and_then(|_| w.flush()))
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<(), Failure> {
        let mut w = self.open(name)?;
        Self::io(w.write_all(text.as_bytes()).and_then(|_| w.flush()))
    }

    pub fn with_writer(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> soid::Result<()>,
    ) -> Result<(), Failure> {
        let mut w = self.open(name)?;
        f(&mut w).map_err(|e| Failure::config(format!("write failed: {e}")))?;
        Self::io(w.flush())
    }
}

fn header(cfg: &RunConfig, schema: &str, model: &str) -> Vec<String> {
    vec![format!("schema: {schema} v{SCHEMA_VERSION}"), format!("seed: {}", cfg.seed), format!("model: {model}")]
}

fn envelope(cfg: &RunConfig, model: &str) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    m.insert("seed".into(), json!(cfg.seed));
    m.insert("model".into(), json!(model));
    m
}

fn quantile_map(values: impl IntoIterator<Item = f64>) -> Value {
    let s = sorted(values);
    let mut m = Map::new();
    for level in QUANTILE_LEVELS {
        m.insert(format!("{level}"), json!(quantile_sorted(&s, level / 100.0)));
    }
    Value::Object(m)
}

pub fn cmd_estimate(cfg: &RunConfig, out: &mut Outputs) -> Result<(), Failure> {
    let model_cfg = cfg.model()?;
    let gmm = cfg.gmm()?;
    let path = cfg.estimate.data.clone().ok_or_else(|| Failure::config("estimate needs a data file (estimate.data or --data)"))?;
    let data = Dataset::load(&path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let sim = model_cfg.build()?;
    let model = sim.model();
    if data.is_empty() {
        return Err(Failure::data(format!("{} contains no observations", path.display())));
    }
    if data.width() != model.obs_width() {
        return Err(Failure::data(format!(
            "{} has {} columns, model {} expects {}",
            path.display(),
            data.width(),
            model.name(),
            model.obs_width()
        )));
    }
    let est = estimate(model, &data, &gmm).map_err(|e| match Failure::from(e) {
        f if f.code == crate::failure::EXIT_DATA => f,
        f => Failure::new(EXIT_ESTIMATION, f.reason),
    })?;

    let at = cfg.estimate.assess_at.clone().unwrap_or_else(|| sim.phi0());
    if at.len() != model.param_dim() {
        return Err(Failure::config(format!("estimate.assess_at must have {} entries", model.param_dim())));
    }
    let bundle = numeric_derivative_bundle(model, &data, &at, &est.weight)?;
    let v = score_covariance(model, &data, &at)?;
    let j = jacobian(model, &data, &at)?;
    let reference = ReferencePoint { bundle, v, j, source: "sample", n: Some(data.len()) };
    let regime = classify_regime(&reference.bundle, &reference.j, &reference.tolerances());

    let name = model_cfg.name();
    let mut doc = envelope(cfg, &name);
    doc.insert("data".into(), json!(path.display().to_string()));
    doc.insert("observations".into(), json!(data.len()));
    doc.insert("phi_hat".into(), json!(est.phi_hat));
    doc.insert("objective".into(), json!(est.objective_value));
    doc.insert("iterations".into(), json!(est.iterations));
    doc.insert("restarts".into(), json!(est.restarts));
    doc.insert("objective_spread".into(), json!(est.objective_spread));
    doc.insert("weight".into(), json!(linalg::to_rows(&est.weight)));
    doc.insert("regime_assessed_at".into(), json!(at));
    doc.insert("regime".into(), serde_json::to_value(&regime).expect("report serializes"));
    doc.insert(
        "bundle".into(),
        serde_json::to_value(BundleFile::from_bundle(&reference.bundle, Some(&reference.v))).expect("bundle serializes"),
    );
    doc.insert("bundle_warnings".into(), json!(reference.bundle.warnings));
    out.json("estimate.json", &Value::Object(doc))
}

fn limit_reference(cfg: &RunConfig) -> Result<(String, ReferencePoint), Failure> {
    if let Some(path) = &cfg.limit_sim.bundle {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read bundle {}: {e}", path.display())))?;
        let file: BundleFile =
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("bundle {}: {e}", path.display())))?;
        let (bundle, v) = file.into_parts()?;
        let v = v.ok_or_else(|| Failure::config("bundle file needs the score covariance v"))?;
        let q = bundle.q();
        let j = linalg::hcat(&bundle.d, &nalgebra::DMatrix::zeros(q, 1));
        return Ok((format!("bundle:{}", path.display()), ReferencePoint { bundle, v, j, source: "bundle_file", n: None }));
    }
    let model_cfg = cfg.model()?;
    let sim = model_cfg.build()?;
    let r = reference_point(sim.as_ref(), &cfg.gmm()?, cfg.limit_sim.reference_n, cfg.seed)?;
    Ok((model_cfg.name(), r))
}

fn degenerate_failure() -> Failure {
    Failure::new(
        EXIT_DEGENERATE,
        "no sign limit: with q = p the nondegeneracy vector F + 6 G_1pp H G + 12 lambda3 vanishes, so the sign of \
         the slow coordinate has no proper limiting distribution; use symmetric intervals",
    )
}

pub fn cmd_limit_sim(cfg: &RunConfig, out: &mut Outputs) -> Result<(), Failure> {
    let (name, reference) = limit_reference(cfg)?;
    let report = classify_regime(&reference.bundle, &reference.j, &reference.tolerances());
    if !report.regime.is_second_order() {
        return Err(Failure::new(
            EXIT_ESTIMATION,
            format!("limit law needs a second-order regime; classified {}", report.regime.as_str()),
        ));
    }
    if report.sign_degenerate {
        return Err(degenerate_failure());
    }
    let b = &reference.bundle;
    let ps = projections(&b.d, &b.g, &b.w)?;
    let sim = simulate_limit(b, &ps, &reference.v, report.regime, cfg.limit_sim.draws, cfg.seed)?;
    if sim.degenerate {
        return Err(degenerate_failure());
    }

    let n = sim.draws.len();
    let cont: Vec<_> = sim.draws.iter().filter(|d| d.v > 0.0).collect();
    let atom = 1.0 - cont.len() as f64 / n as f64;
    let b1 = sim.draws.iter().filter(|d| d.b).count() as f64 / n as f64;
    let b1_cont = if cont.is_empty() { f64::NAN } else { cont.iter().filter(|d| d.b).count() as f64 / cont.len() as f64 };

    let mut doc = envelope(cfg, &name);
    doc.insert("reference_source".into(), json!(reference.source));
    doc.insert("regime".into(), serde_json::to_value(&report).expect("report serializes"));
    doc.insert("draws".into(), json!(n));
    doc.insert("atom_mass".into(), json!(atom));
    doc.insert("atom_mass_se".into(), json!(binomial_se(atom, n)));
    doc.insert("pr_b1".into(), json!(b1));
    doc.insert("pr_b1_se".into(), json!(binomial_se(b1, n)));
    doc.insert("pr_b1_given_continuous".into(), json!(b1_cont));
    doc.insert("pr_b1_given_continuous_se".into(), json!(binomial_se(b1_cont, cont.len().max(1))));
    let mut q = Map::new();
    q.insert("dphip".into(), quantile_map(sim.draws.iter().map(|d| d.dphip)));
    q.insert(
        "dphi1".into(),
        Value::Array((0..sim.p - 1).map(|i| quantile_map(sim.draws.iter().map(|d| d.dphi1[i]))).collect()),
    );
    doc.insert("quantiles".into(), Value::Object(q));

    let head = header(cfg, "limit-draws", &name);
    out.with_writer("limit_draws.csv", |w| write_draws_csv(w, &sim, &head))?;
    out.json("limit_quantiles.json", &Value::Object(doc))
}

fn write_mc(cfg: &RunConfig, out: &mut Outputs, report: &McReport, prefix: &str) -> Result<(), Failure> {
    let summary = serde_json::to_value(report).expect("report serializes");
    out.json(&format!("{prefix}summary.json"), &summary)?;
    let head = header(cfg, "mc-records", &report.model);
    out.with_writer(&format!("{prefix}records.csv"), |w| report.write_records_csv(w, &head[2..]))?;
    let mut slopes = format!("# schema: mc-slopes v{SCHEMA_VERSION}\n# seed: {}\ncoordinate,slope,stderr,flag\n", cfg.seed);
    for s in &report.slopes {
        let (slope, se) = s.fit.map(|f| (f.slope.to_string(), f.stderr.to_string())).unwrap_or_default();
        let flag = s.flag.clone().unwrap_or_default().replace([',', '\n'], ";");
        slopes.push_str(&format!("{},{slope},{se},{flag}\n", s.coordinate));
    }
    out.text(&format!("{prefix}slopes.csv"), &slopes)
}

pub fn cmd_mc(cfg: &RunConfig, out: &mut Outputs) -> Result<(), Failure> {
    let plan = cfg.mc.to_plan(cfg.model()?, cfg.gmm()?, cfg.seed);
    let report = run_plan(&plan)?;
    write_mc(cfg, out, &report, "mc_")
}

pub fn cmd_simulate(cfg: &RunConfig, out: &mut Outputs) -> Result<(), Failure> {
    let model_cfg = cfg.model()?;
    let sim = model_cfg.build()?;
    if cfg.simulate.n == 0 {
        return Err(Failure::config("simulate.n must be positive"));
    }
    let data = sim.simulate(cfg.simulate.n, cfg.seed)?;
    let head = header(cfg, "data", &model_cfg.name());
    out.with_writer("data.csv", |w| {
        for line in &head {
            writeln!(w, "# {line}")?;
        }
        data.write_csv(w)
    })
}

fn ar1_regime(cfg: &RunConfig, sigma2: [f64; 3]) -> Result<RegimeReport, Failure> {
    let panel = PanelAr1Config::new(0, 1.0, sigma2, 0);
    let model = ModelConfig::Ar1 { panel, moments: Ar1Moments::AsOnly }.build()?;
    // Always the sampled reference, so equal and unequal variances are treated alike.
    let data = model.simulate(cfg.ar1_demo.reference_n, cfg.seed)?;
    let m = model.model();
    let w = nalgebra::DMatrix::identity(1, 1);
    let bundle = numeric_derivative_bundle(m, &data, &[1.0], &w)?;
    let v = score_covariance(m, &data, &[1.0])?;
    let j = jacobian(m, &data, &[1.0])?;
    let r = ReferencePoint { bundle, v, j, source: "reference_sample", n: Some(data.len()) };
    Ok(classify_regime(&r.bundle, &r.j, &r.tolerances()))
}

pub fn cmd_ar1_demo(cfg: &RunConfig, out: &mut Outputs) -> Result<(), Failure> {
    let demo = &cfg.ar1_demo;
    let equal = ar1_regime(cfg, demo.equal_sigma2)?;
    let unequal = ar1_regime(cfg, demo.unequal_sigma2)?;

    let panel = PanelAr1Config::new(0, 1.0, demo.equal_sigma2, 0);
    let mut mc = cfg.mc.clone();
    mc.t_grid = demo.n_grid.clone();
    mc.replications = demo.replications;
    mc.limit_draws = demo.limit_draws;
    mc.reference_n = demo.reference_n;
    let plan = mc.to_plan(ModelConfig::Ar1 { panel, moments: Ar1Moments::AsOnly }, cfg.gmm()?, cfg.seed);
    let report = run_plan(&plan)?;

    let per_n: Vec<Value> = report
        .per_t
        .iter()
        .map(|s| {
            let n_class = s.completed;
            let freq = s.atom_frequency.unwrap_or(f64::NAN);
            let se = binomial_se(0.5, n_class);
            json!({
                "n": s.t,
                "ks_continuous": s.ks_continuous,
                "atom_frequency": freq,
                "atom_z": (freq - 0.5) / se,
                "continuous_count": s.continuous_count,
                "pr_positive_given_continuous": s.positive_given_continuous,
            })
        })
        .collect();
    let total: usize = report.per_t.iter().map(|s| s.completed).sum();
    let atoms: f64 = report.per_t.iter().map(|s| s.atom_frequency.unwrap_or(0.0) * s.completed as f64).sum();
    let pooled_freq = atoms / total.max(1) as f64;
    let pooled_se = binomial_se(0.5, total.max(1));

    let mut doc = envelope(cfg, "ar1:as_only");
    doc.insert(
        "regimes".into(),
        json!({
            "equal_variances": { "sigma2": demo.equal_sigma2, "report": equal },
            "unequal_variances": { "sigma2": demo.unequal_sigma2, "report": unequal },
        }),
    );
    doc.insert(
        "ks".into(),
        json!({
            "continuous_part": { "pooled": report.ks_pooled, "by_n": per_n },
            "atom_test": {
                "expected": 0.5,
                "pooled_frequency": pooled_freq,
                "se": pooled_se,
                "z": (pooled_freq - 0.5) / pooled_se,
                "within_3se": (pooled_freq - 0.5).abs() <= 3.0 * pooled_se,
            },
            "limit_atom_mass": report.limit.as_ref().map(|l| l.atom_mass),
        }),
    );
    doc.insert(
        "sign_frequency".into(),
        json!({
            "sign_limit_degenerate": equal.sign_degenerate,
            "by_n": report.per_t.iter().map(|s| json!({"n": s.t, "pr_positive_given_continuous": s.positive_given_continuous, "continuous_count": s.continuous_count})).collect::<Vec<_>>(),
        }),
    );
    out.json("ar1_demo.json", &Value::Object(doc))?;
    write_mc(cfg, out, &report, "ar1_mc_")
}
