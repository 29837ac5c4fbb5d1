//! Command-line front end: `mnpdict <command> [flags]`.
//!
//! Every run reads one TOML [`RunConfig`] (all keys optional, unknown keys
//! rejected); flags override it. Outputs land in `--out` together with a
//! `manifest.json` listing the resolved config and input checksums. JSON
//! outputs embed that manifest and CSV outputs start with a `# manifest` line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dictionary::{build_set, load_dictionary, write_atomic, BuildPlan, CondKey, ConditionGrid, DictionarySet};
use crate::error::{Error, Result};
use crate::estimator::{joint_estimate, EstimateOptions, EstimationReport, EstimationResult, MeasurementSet};
use crate::magmodel::{ModelKind, SimOptions};
use crate::metrics::{marginals, nrmse, zero_crossing_time, write_metric_csv, Marginals, MetricRow};
use crate::predictor::{compare_with_truth, leave_one_out, loo_sweep, report, PredictionReport};
use crate::signalio::{candidate_harmonics, ingest_dir, read_measurement_csv, synth_generate, write_measurement_csv, SbrOptions, SyntheticSpec, DEFAULT_SYNTH_PERIODS};
use crate::types::{Condition, DriveField, ParticleGrid, SimConstants, TimeSignal, WeightVector};

/// Environment variable that overrides the dictionary cache directory.
pub const CACHE_ENV: &str = "MNPDICT_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "mnpdict", version, about = "Build MNP dictionaries, estimate weights and transfer functions, predict signals")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for simulation and synthetic noise (overrides the config).
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Run exactly `max_iter` alternating-minimization iterations without early stopping.
    #[arg(long, global = true)]
    pub fixed_iterations: bool,
    /// Print what would be done and exit without simulating or writing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build (or resume) the dictionary set into the cache directory.
    BuildDict,
    /// Jointly estimate weights and transfer functions from the measurements.
    Estimate,
    /// Estimate, then report fitted signals at every measured condition.
    Fit,
    /// Estimate without one viscosity and predict the signals at it.
    Predict {
        /// Viscosity index to hold out.
        #[arg(long)]
        exclude: usize,
    },
    /// Leave each measured viscosity out in turn.
    Loo,
    /// Generate synthetic measurements from known particles and check recovery.
    SynthValidate {
        /// SNR values to run; `inf` for noiseless (default: from the config).
        #[arg(long, value_delimiter = ',')]
        snr: Option<Vec<f64>>,
    },
    /// Recompute metrics from stored signal CSV files.
    Metrics {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Print the resolved configuration, job counts and optionally a dictionary manifest.
    Info {
        /// Dictionary file whose manifest should be printed.
        #[arg(long)]
        dictionary: Option<PathBuf>,
    },
}

/// Grid axes: core diameter (nm), coating thickness (nm), anisotropy (kJ/m³).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxes {
    pub dc: Vec<f64>,
    pub ds: Vec<f64>,
    pub k: Vec<f64>,
}

impl Default for GridAxes {
    fn default() -> Self {
        let g = ParticleGrid::table1();
        Self { dc: g.dc_values().to_vec(), ds: g.ds_values().to_vec(), k: g.k_values().to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub max_iter: usize,
    pub fixed_iterations: bool,
    pub tol_factor: f64,
    pub stagnation: f64,
    pub patience: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        let d = EstimateOptions::default();
        Self { max_iter: d.max_iter, fixed_iterations: false, tol_factor: d.tol_factor, stagnation: d.stagnation, patience: d.patience }
    }
}

impl EstimatorConfig {
    pub fn options(&self) -> EstimateOptions {
        EstimateOptions {
            max_iter: self.max_iter,
            early_stop: !self.fixed_iterations,
            stagnation: self.stagnation,
            patience: self.patience,
            tol_factor: self.tol_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dictionary cache (default: `<out>/dictionaries`).
    pub cache: Option<PathBuf>,
    /// Directory of raw measurement files, or a `k,j,m,re,im` CSV file.
    pub measurements: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// One generator particle; `dh = dc + ds` must be on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorAtom {
    pub dc: f64,
    pub dh: f64,
    pub k: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub atoms: Vec<GeneratorAtom>,
    pub noiseless: bool,
    pub snr: Vec<f64>,
    /// Condition whose noiseless peak sets the noise level.
    pub reference: Condition,
    /// DF periods averaged per synthetic acquisition.
    pub periods: u32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            atoms: vec![GeneratorAtom { dc: 20.0, dh: 60.0, k: 6.0, weight: 1.0 }],
            noiseless: true,
            snr: vec![10.0, 1.0],
            reference: Condition { drive: DriveField { freq: 250.0, amplitude: 10.0 }, eta: 0.89 },
            periods: DEFAULT_SYNTH_PERIODS,
        }
    }
}

/// Everything a run depends on besides input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelKind,
    pub grid: GridAxes,
    pub conditions: ConditionGrid,
    /// Highest dictionary harmonic (also capped by Nyquist).
    pub max_harmonic: u32,
    /// `seed` here is replaced by the top-level seed.
    pub simulation: SimOptions,
    pub constants: SimConstants,
    pub estimator: EstimatorConfig,
    pub sbr: SbrOptions,
    pub paths: PathsConfig,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelKind::CoupledBrownNeel,
            grid: GridAxes::default(),
            conditions: ConditionGrid::reference(),
            max_harmonic: crate::signalio::DEFAULT_MAX_HARMONIC,
            simulation: SimOptions::default(),
            constants: SimConstants::default(),
            estimator: EstimatorConfig::default(),
            sbr: SbrOptions::default(),
            paths: PathsConfig::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.particle_grid()?;
        ConditionGrid::new(self.conditions.drives.clone(), self.conditions.viscosities.clone())?;
        for d in &self.conditions.drives {
            DriveField::new(d.freq, d.amplitude)?;
        }
        self.simulation.validate()?;
        self.constants.validate()?;
        if self.estimator.max_iter == 0 {
            return Err(Error::Config("estimator.max_iter must be at least 1".into()));
        }
        if !(self.sbr.threshold >= 0.0) {
            return Err(Error::Config("sbr.threshold must be non-negative".into()));
        }
        if self.synthetic.snr.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("synthetic SNR values must be positive".into()));
        }
        if self.synthetic.periods == 0 {
            return Err(Error::Config("synthetic.periods must be at least 1".into()));
        }
        Ok(())
    }

    pub fn particle_grid(&self) -> Result<ParticleGrid> {
        ParticleGrid::new(self.grid.dc.clone(), self.grid.ds.clone(), self.grid.k.clone())
    }

    pub fn build_plan(&self) -> Result<BuildPlan> {
        let harmonics = self
            .conditions
            .drives
            .iter()
            .map(|d| candidate_harmonics(d.samples_per_period(self.simulation.fs), self.max_harmonic))
            .collect::<Result<_>>()?;
        Ok(BuildPlan {
            grid: self.particle_grid()?,
            conditions: self.conditions.clone(),
            harmonics,
            model: self.model,
            options: self.simulation.with_seed(self.seed),
            constants: self.constants,
        })
    }

    /// Ground-truth weights of the synthetic generator.
    pub fn generator_weights(&self) -> Result<WeightVector> {
        let grid = self.particle_grid()?;
        let mut x = vec![0.0; grid.len()];
        for a in &self.synthetic.atoms {
            let i = grid
                .find(a.dc, a.dh - a.dc, a.k)
                .ok_or_else(|| Error::Config(format!("generator atom dc={} dh={} K={} is not on the grid", a.dc, a.dh, a.k)))?;
            x[i] += a.weight;
        }
        WeightVector::new(x)
    }
}

/// Config plus flag overrides.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub config_path: Option<PathBuf>,
    pub out: PathBuf,
    pub cache: PathBuf,
    pub workers: Option<usize>,
    pub dry_run: bool,
}

impl Resolved {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let mut config = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = cli.seed {
            config.seed = s;
        }
        config.simulation.seed = config.seed;
        if cli.fixed_iterations {
            config.estimator.fixed_iterations = true;
        }
        let out = cli.out.clone().or_else(|| config.paths.output.clone()).unwrap_or_else(|| PathBuf::from("mnpdict-out"));
        let cache = std::env::var_os(CACHE_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .or_else(|| config.paths.cache.clone())
            .unwrap_or_else(|| out.join("dictionaries"));
        Ok(Self { config, config_path: cli.config.clone(), out, cache, workers: cli.workers, dry_run: cli.dry_run })
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Provenance written next to, and embedded in, every output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    /// SHA-256 of each input file, keyed by a stable label.
    pub inputs: BTreeMap<String, String>,
}

struct Output {
    dir: PathBuf,
    manifest: RunManifest,
    digest: String,
}

impl Output {
    fn new(dir: &Path, manifest: RunManifest) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let bytes = serde_json::to_vec_pretty(&manifest)?;
        let digest = hex::encode(Sha256::digest(&bytes));
        write_atomic(&dir.join("manifest.json"), &bytes)?;
        Ok(Self { dir: dir.to_path_buf(), manifest, digest })
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            manifest: &'a RunManifest,
            result: &'a T,
        }
        self.write(name, &serde_json::to_vec_pretty(&Wrapped { manifest: &self.manifest, result: value })?)
    }

    fn csv(&self, name: &str, body: &[u8]) -> Result<()> {
        let mut bytes = format!("# manifest sha256={}\n", self.digest).into_bytes();
        bytes.extend_from_slice(body);
        self.write(name, &bytes)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_atomic(&path, bytes)
    }

    fn report(&self, prefix: &str, rep: &PredictionReport) -> Result<()> {
        self.json(&format!("{prefix}/report.json"), rep)?;
        self.csv(&format!("{prefix}/metrics.csv"), &rep.metrics_csv()?)?;
        for e in &rep.entries {
            self.csv(&format!("{prefix}/signal_k{}_j{}.csv", e.k, e.j), &rep.signal_csv(e)?)?;
        }
        Ok(())
    }
}

struct Session<'a> {
    r: &'a Resolved,
    out: &'a mut dyn Write,
    inputs: BTreeMap<String, String>,
}

impl Session<'_> {
    fn plan(&self) -> Result<BuildPlan> {
        self.r.config.build_plan()
    }

    fn dictionaries(&mut self) -> Result<DictionarySet> {
        let plan = self.plan()?;
        let set = build_set(&plan, self.r.workers, Some(&self.r.cache))?;
        for key in plan.conditions.keys() {
            let p = BuildPlan::cache_file(&self.r.cache, key);
            self.inputs.insert(format!("dictionaries/{}", file_label(&p)), sha256_file(&p)?);
        }
        Ok(set)
    }

    fn measurements(&mut self) -> Result<MeasurementSet> {
        let path = self
            .r
            .config
            .paths
            .measurements
            .clone()
            .ok_or_else(|| Error::Config("paths.measurements is not set".into()))?;
        if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&path)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
            files.sort();
            for f in files.iter().filter(|f| f.is_file()) {
                self.inputs.insert(format!("measurements/{}", file_label(f)), sha256_file(f)?);
            }
            Ok(ingest_dir(&path, &self.r.config.conditions, &self.r.config.sbr)?.measurements)
        } else {
            self.inputs.insert(format!("measurements/{}", file_label(&path)), sha256_file(&path)?);
            read_measurement_csv(std::fs::File::open(&path)?, &self.r.config.conditions)
        }
    }

    fn output(&mut self, command: &str) -> Result<Output> {
        if let Some(p) = &self.r.config_path {
            self.inputs.insert(format!("config/{}", file_label(p)), sha256_file(p)?);
        }
        Output::new(
            &self.r.out,
            RunManifest {
                tool: "mnpdict".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                config: self.r.config.clone(),
                inputs: self.inputs.clone(),
            },
        )
    }

    fn estimate(&mut self, dicts: &DictionarySet, meas: &MeasurementSet) -> Result<EstimationResult> {
        let est = joint_estimate(dicts, meas, &self.r.config.estimator.options())?;
        writeln!(
            self.out,
            "estimate: {} iterations, objective {:.6e}, {}",
            est.iterations_run,
            est.objective_trace.last().copied().unwrap_or(f64::NAN),
            if est.converged { "converged" } else { "not converged" }
        )?;
        Ok(est)
    }
}

fn file_label(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn summary_table(out: &mut dyn Write, rows: &[MetricRow]) -> Result<()> {
    for r in rows {
        writeln!(out, "  {:<16} k={} j={}  {:.6}", r.metric, r.k, r.j, r.value)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    estimate: EstimationReport,
    marginals: &'a Marginals,
}

fn weights_csv(grid: &ParticleGrid, x: &WeightVector) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["atom", "dc", "ds", "k", "weight"])?;
    for (i, v) in x.as_slice().iter().enumerate() {
        let p = grid.atom(i);
        w.write_record([i.to_string(), p.dc.to_string(), p.ds.to_string(), p.k.to_string(), v.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// One recovery run of `synth-validate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    /// `None` for the noiseless run.
    pub snr: Option<f64>,
    pub nwd_dc: f64,
    pub nwd_dh: f64,
    pub nwd_k: f64,
    pub max_fitted_nrmse: f64,
    pub tf_magnitude_error: f64,
    pub tf_phase_error: f64,
    pub iterations: usize,
}

/// Run one synthetic recovery at `snr` (`None`: noiseless).
pub fn validate_once(cfg: &RunConfig, dicts: &DictionarySet, snr: Option<f64>) -> Result<(ValidationRow, MeasurementSet)> {
    let spec = SyntheticSpec {
        reference: cfg.synthetic.reference,
        sbr: cfg.sbr,
        fs: cfg.simulation.fs,
        periods: cfg.synthetic.periods,
        ..SyntheticSpec::new(cfg.generator_weights()?, snr, cfg.seed)
    };
    let (meas, truth) = synth_generate(&spec, dicts)?;
    let est = joint_estimate(dicts, &meas, &cfg.estimator.options())?;
    let cmp = compare_with_truth(dicts, &truth, &est, cfg.simulation.fs)?;
    let row = ValidationRow {
        snr,
        nwd_dc: cmp.nwd[0],
        nwd_dh: cmp.nwd[1],
        nwd_k: cmp.nwd[2],
        max_fitted_nrmse: cmp.max_fitted_nrmse(),
        tf_magnitude_error: cmp.tf_magnitude_error,
        tf_phase_error: cmp.tf_phase_error,
        iterations: est.iterations_run,
    };
    Ok((row, meas))
}

fn parse_signal_label(p: &Path) -> (usize, usize) {
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut k = 0;
    let mut j = 0;
    for part in stem.split('_') {
        if let Some(v) = part.strip_prefix('k').and_then(|v| v.parse().ok()) {
            k = v;
        } else if let Some(v) = part.strip_prefix('j').and_then(|v| v.parse().ok()) {
            j = v;
        }
    }
    (k, j)
}

/// Metrics of one `time,measured,predicted,spanned` signal file.
pub fn signal_file_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut cols: [Vec<f64>; 4] = Default::default();
    let mut has_measured = true;
    for rec in rdr.records() {
        let rec = rec?;
        for (i, c) in cols.iter_mut().enumerate() {
            let field = rec.get(i).unwrap_or("");
            if field.is_empty() && i == 1 {
                has_measured = false;
                continue;
            }
            c.push(field.parse().map_err(|e| Error::Format { path: path.to_path_buf(), reason: format!("bad value {field:?}: {e}") })?);
        }
    }
    let [time, measured, predicted, _] = cols;
    if time.len() < 2 {
        return Err(Error::Format { path: path.to_path_buf(), reason: "need at least two samples".into() });
    }
    let fs = 1.0 / (time[1] - time[0]);
    let fd = fs / time.len() as f64;
    let (k, j) = parse_signal_label(path);
    let row = |metric: &str, value: f64| MetricRow { metric: metric.into(), k, j, value };
    let mut rows = Vec::new();
    let pred = TimeSignal::new(predicted, fs, fd)?;
    if let Ok(z) = zero_crossing_time(&pred) {
        rows.push(row("tzc_predicted", z.percent));
    }
    if has_measured {
        let meas = TimeSignal::new(measured, fs, fd)?;
        rows.push(row("nrmse", nrmse(&meas.samples, &pred.samples)?));
        if let Ok(z) = zero_crossing_time(&meas) {
            rows.push(row("tzc_measured", z.percent));
        }
    }
    Ok(rows)
}

/// Execute a parsed command line, writing the human-readable summary to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let r = Resolved::from_cli(cli)?;
    if let Some(w) = r.workers {
        if rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global().is_err() {
            log::debug!("global thread pool already initialized");
        }
    }
    let plan = r.config.build_plan()?;
    let mut s = Session { r: &r, out, inputs: BTreeMap::new() };
    let counts = |out: &mut dyn Write| -> Result<()> {
        writeln!(out, "atoms: {}", plan.grid.len())?;
        writeln!(out, "conditions: {}", plan.conditions.len())?;
        writeln!(out, "simulations: {}", plan.simulations())?;
        Ok(())
    };
    match &cli.command {
        Command::BuildDict => {
            counts(s.out)?;
            if r.dry_run {
                return Ok(());
            }
            writeln!(s.out, "cache: {}", r.cache.display())?;
            s.dictionaries()?;
            let o = s.output("build-dict")?;
            o.json("build.json", &plan.simulations())?;
            writeln!(s.out, "dictionary set complete")?;
        }
        Command::Info { dictionary } => {
            counts(s.out)?;
            writeln!(s.out, "model: {:?}", r.config.model)?;
            writeln!(s.out, "cache: {}", r.cache.display())?;
            writeln!(s.out, "output: {}", r.out.display())?;
            for (k, (d, hs)) in plan.conditions.drives.iter().zip(&plan.harmonics).enumerate() {
                writeln!(s.out, "drive {k}: {} Hz, {} mT, {} candidate harmonics", d.freq, d.amplitude, hs.len())?;
            }
            if let Some(p) = dictionary {
                let d = load_dictionary(p)?;
                writeln!(s.out, "{}", serde_json::to_string_pretty(&d.manifest())?)?;
            }
        }
        _ if r.dry_run => {
            counts(s.out)?;
            writeln!(s.out, "dry run: {:?} would write to {}", cli.command, r.out.display())?;
        }
        Command::Estimate => {
            let dicts = s.dictionaries()?;
            let meas = s.measurements()?;
            let est = s.estimate(&dicts, &meas)?;
            let marg = marginals(&est.weights, dicts.grid())?;
            let o = s.output("estimate")?;
            o.json("estimate.json", &EstimateOutput { estimate: EstimationReport::from(&est), marginals: &marg })?;
            o.csv("weights.csv", &weights_csv(dicts.grid(), &est.weights)?)?;
        }
        Command::Fit => {
            let dicts = s.dictionaries()?;
            let meas = s.measurements()?;
            let est = s.estimate(&dicts, &meas)?;
            let keys: Vec<CondKey> = meas.keys().collect();
            let rep = report(&dicts, &meas, &est, &keys, None, r.config.simulation.fs)?;
            let o = s.output("fit")?;
            o.report("fit", &rep)?;
            o.csv("weights.csv", &weights_csv(dicts.grid(), &est.weights)?)?;
            summary_table(s.out, &rep.metrics)?;
        }
        Command::Predict { exclude } => {
            let dicts = s.dictionaries()?;
            let meas = s.measurements()?;
            let (_, rep) = leave_one_out(&dicts, &meas, *exclude, &r.config.estimator.options(), r.config.simulation.fs)?;
            let o = s.output("predict")?;
            o.report(&format!("predict_j{exclude}"), &rep)?;
            summary_table(s.out, &rep.metrics)?;
        }
        Command::Loo => {
            let dicts = s.dictionaries()?;
            let meas = s.measurements()?;
            let sweep = loo_sweep(&dicts, &meas, &r.config.estimator.options(), r.config.simulation.fs)?;
            let o = s.output("loo")?;
            for rep in &sweep.reports {
                o.report(&format!("loo/j{}", rep.excluded.unwrap_or(0)), rep)?;
            }
            let mut buf = Vec::new();
            write_metric_csv(&sweep.weight_nwd, &mut buf)?;
            o.csv("loo/weight_nwd.csv", &buf)?;
            writeln!(s.out, "{} leave-one-out reports", sweep.reports.len())?;
            for rep in &sweep.reports {
                writeln!(s.out, "  excluded j={}: max NRMSE {:.4}%", rep.excluded.unwrap_or(0), rep.max_nrmse().unwrap_or(f64::NAN))?;
            }
            summary_table(s.out, &sweep.weight_nwd)?;
        }
        Command::SynthValidate { snr } => {
            let dicts = s.dictionaries()?;
            let mut runs: Vec<Option<f64>> = Vec::new();
            match snr {
                Some(v) => runs.extend(v.iter().map(|&x| x.is_finite().then_some(x))),
                None => {
                    if r.config.synthetic.noiseless {
                        runs.push(None);
                    }
                    runs.extend(r.config.synthetic.snr.iter().map(|&x| Some(x)));
                }
            }
            if runs.iter().flatten().any(|x| !(*x > 0.0)) {
                return Err(Error::Config("SNR values must be positive".into()));
            }
            let mut rows = Vec::new();
            let mut sets = Vec::new();
            for &run in &runs {
                let (row, meas) = validate_once(&r.config, &dicts, run)?;
                rows.push(row);
                sets.push(meas);
            }
            let o = s.output("synth-validate")?;
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &rows {
                w.serialize(row)?;
            }
            o.csv("synth_validation.csv", &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
            for (row, meas) in rows.iter().zip(&sets) {
                let mut buf = Vec::new();
                write_measurement_csv(meas, &mut buf)?;
                let label = row.snr.map_or("inf".to_string(), |v| v.to_string());
                o.csv(&format!("synthetic_snr{label}.csv"), &buf)?;
            }
            writeln!(s.out, "{:>8} {:>10} {:>10} {:>10} {:>12} {:>10} {:>10}", "SNR", "NWD dc", "NWD dh", "NWD K", "NRMSE %", "|H| err", "∠H err")?;
            for row in &rows {
                writeln!(
                    s.out,
                    "{:>8} {:>10.5} {:>10.5} {:>10.5} {:>12.5} {:>10.5} {:>10.5}",
                    row.snr.map_or("inf".into(), |v| v.to_string()),
                    row.nwd_dc,
                    row.nwd_dh,
                    row.nwd_k,
                    row.max_fitted_nrmse,
                    row.tf_magnitude_error,
                    row.tf_phase_error
                )?;
            }
        }
        Command::Metrics { paths } => {
            let mut rows = Vec::new();
            for p in paths {
                s.inputs.insert(format!("signals/{}", file_label(p)), sha256_file(p)?);
                rows.extend(signal_file_metrics(p)?);
            }
            let o = s.output("metrics")?;
            let mut buf = Vec::new();
            write_metric_csv(&rows, &mut buf)?;
            o.csv("metrics.csv", &buf)?;
            summary_table(s.out, &rows)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_counts() {
        let plan = RunConfig::default().build_plan().unwrap();
        assert_eq!(plan.grid.len(), 4680);
        assert_eq!(plan.simulations(), 168_480);
        assert!(plan.harmonics.iter().all(|h| h.max() == Some(101)));
    }

    #[test]
    fn config_parsing() {
        let cfg = RunConfig::from_toml(
            r#"
            seed = 3
            model = "LangevinEquilibrium"
            [grid]
            dc = [15.0, 20.0]
            ds = [40.0]
            k = [6.0]
            [conditions]
            drives = [{ freq = 1000.0, amplitude = 10.0 }]
            viscosities = [0.89, 3.32]
            [synthetic]
            atoms = [{ dc = 20.0, dh = 60.0, k = 6.0, weight = 1.0 }]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.generator_weights().unwrap().as_slice(), &[0.0, 1.0]);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[estimator]\nmax_iter = 0").is_err());
        assert!(RunConfig::from_toml("[grid]\ndc = [2.0, 1.0]\nds = [1.0]\nk = [1.0]").is_err());
        let round = RunConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn signal_labels() {
        assert_eq!(parse_signal_label(Path::new("x/signal_k2_j5.csv")), (2, 5));
        assert_eq!(parse_signal_label(Path::new("other.csv")), (0, 0));
    }
}
