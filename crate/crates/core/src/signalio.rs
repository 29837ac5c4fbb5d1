//! Measurement ingestion and synthetic measurement generation.
//!
//! A raw measurement file is a block of `# key = value` header lines (TOML
//! syntax) followed by CSV rows, one column per repetition:
//!
//! ```text
//! # kind = "measurement"
//! # k = 0
//! # j = 2
//! # fs = 2000000.0
//! # fd = 250.0
//! # bp = 10.0
//! # eta = 2.08
//! # m_fe = 0.35
//! # reps = 2
//! # baselines = ["empty_pre.csv", "empty_post.csv"]
//! rep0,rep1
//! 0.0012,0.0011
//! ...
//! ```
//!
//! Baseline files use the same layout with `kind = "baseline"` and no
//! `baselines`, `k`, `j` or `eta` keys. Paths are relative to the measurement file.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{write_atomic, CondKey, ConditionGrid, DictionarySet};
use crate::error::{Error, Result};
use crate::estimator::{MeasurementSet, TransferFunction, TransferSet};
use crate::spectral::{extract_harmonics, synthesize_time};
use crate::types::{Condition, DriveField, HarmonicSet, Spectrum, TimeSignal, WeightVector, DEFAULT_SAMPLE_RATE};

pub const DEFAULT_SBR_THRESHOLD: f64 = 15.0;
/// DF periods in one synthetic acquisition pulse.
pub const DEFAULT_SYNTH_PERIODS: u32 = 20;
pub const DEFAULT_MAX_HARMONIC: u32 = 101;

/// Harmonic selection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbrOptions {
    pub threshold: f64,
    pub max_harmonic: u32,
}

impl Default for SbrOptions {
    fn default() -> Self {
        Self { threshold: DEFAULT_SBR_THRESHOLD, max_harmonic: DEFAULT_MAX_HARMONIC }
    }
}

/// Odd harmonics from 3 up to `max_harmonic` that stay below Nyquist for
/// `samples` points per period.
pub fn candidate_harmonics(samples: usize, max_harmonic: u32) -> Result<HarmonicSet> {
    let nyquist = (samples.saturating_sub(1) / 2) as u32;
    HarmonicSet::selection((3..=max_harmonic.min(nyquist)).step_by(2).collect())
}

/// Harmonics of `signal` whose amplitude is at least `threshold` times the
/// baseline amplitude. A zero baseline bin counts as infinite SBR.
pub fn sbr_select(signal: &Spectrum, baseline: &Spectrum, threshold: f64, max_harmonic: u32) -> Result<HarmonicSet> {
    if signal.harmonics != baseline.harmonics {
        return Err(Error::Shape("signal and baseline spectra use different harmonics".into()));
    }
    if !(threshold >= 0.0) {
        return Err(Error::InvalidParameter(format!("SBR threshold {threshold} must be non-negative")));
    }
    let mut keep = Vec::new();
    let mut zero_bins = Vec::new();
    for ((&m, s), b) in signal.harmonics.indices().iter().zip(&signal.values).zip(&baseline.values) {
        if m > max_harmonic || m < 3 || m % 2 == 0 {
            continue;
        }
        if b.norm() == 0.0 {
            zero_bins.push(m);
            keep.push(m);
        } else if s.norm() >= threshold * b.norm() {
            keep.push(m);
        }
    }
    if !zero_bins.is_empty() {
        log::warn!("baseline is zero at harmonics {zero_bins:?}; treating their SBR as infinite");
    }
    HarmonicSet::selection(keep)
}

/// Repetitions of one condition plus the empty-chamber baselines recorded around it.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMeasurement {
    pub key: CondKey,
    pub fs: f64,
    pub drive: DriveField,
    /// Viscosity (mPa·s).
    pub eta: f64,
    /// Iron mass (g).
    pub iron_mass: Option<f64>,
    /// Sample columns, one per repetition, all the same length.
    pub repetitions: Vec<Vec<f64>>,
    /// Baseline recordings (typically pre and post), each already averaged over its repetitions.
    pub baselines: Vec<Vec<f64>>,
}

/// Spectra of a preprocessed measurement over all candidate harmonics.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    /// Baseline-subtracted signal.
    pub signal: Spectrum,
    pub baseline: Spectrum,
    pub selected: HarmonicSet,
}

impl Preprocessed {
    pub fn selected_spectrum(&self) -> Result<Spectrum> {
        self.signal.restrict(&self.selected)
    }
}

fn mean_columns(cols: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = cols.first().ok_or_else(|| Error::Shape("no repetitions".into()))?;
    if cols.iter().any(|c| c.len() != first.len()) {
        return Err(Error::Shape("repetition lengths differ".into()));
    }
    let n = cols.len() as f64;
    Ok((0..first.len()).map(|i| cols.iter().map(|c| c[i]).sum::<f64>() / n).collect())
}

/// Average consecutive whole periods of `samples` into one period.
pub fn fold_periods(samples: &[f64], fs: f64, fd: f64) -> Result<TimeSignal> {
    let per = fs / fd;
    let n = per.round() as usize;
    if n < 2 || (per - n as f64).abs() > 1e-9 * per {
        return Err(Error::InvalidParameter(format!("fs/fd = {per} is not a whole number of samples")));
    }
    if samples.is_empty() || !samples.len().is_multiple_of(n) {
        return Err(Error::Shape(format!("{} samples is not a whole number of {n}-sample periods", samples.len())));
    }
    let periods = samples.len() / n;
    let folded = (0..n).map(|i| (0..periods).map(|p| samples[p * n + i]).sum::<f64>() / periods as f64).collect();
    TimeSignal::new(folded, fs, fd)
}

/// Average repetitions, subtract the mean baseline, extract odd harmonics
/// from 3 upward and select them by SBR.
pub fn preprocess(raw: &RawMeasurement, opts: &SbrOptions) -> Result<Preprocessed> {
    if raw.baselines.is_empty() {
        return Err(Error::MissingBaseline(format!("condition {}", raw.key)));
    }
    let fd = raw.drive.freq;
    let meas = fold_periods(&mean_columns(&raw.repetitions)?, raw.fs, fd)?;
    let folded: Vec<TimeSignal> = raw.baselines.iter().map(|b| fold_periods(b, raw.fs, fd)).collect::<Result<_>>()?;
    let base = TimeSignal::new(mean_columns(&folded.into_iter().map(|t| t.samples).collect::<Vec<_>>())?, raw.fs, fd)?;
    let diff = TimeSignal::new(meas.samples.iter().zip(&base.samples).map(|(a, b)| a - b).collect(), raw.fs, fd)?;
    let cands = candidate_harmonics(diff.len(), opts.max_harmonic)?;
    let signal = extract_harmonics(&diff, &cands)?;
    let baseline = extract_harmonics(&base, &cands)?;
    let selected = sbr_select(&signal, &baseline, opts.threshold, opts.max_harmonic)?;
    Ok(Preprocessed { signal, baseline, selected })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawKind {
    Measurement,
    Baseline,
}

/// Header of a raw measurement or baseline file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHeader {
    pub kind: RawKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
    #[serde(default = "default_fs")]
    pub fs: f64,
    pub fd: f64,
    pub bp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_fe: Option<f64>,
    pub reps: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baselines: Vec<PathBuf>,
}

fn default_fs() -> f64 {
    DEFAULT_SAMPLE_RATE
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

/// Parse a raw file into its header and repetition columns.
pub fn read_raw_file(path: &Path) -> Result<(RawHeader, Vec<Vec<f64>>)> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    let mut header = String::new();
    let mut body_start = 0;
    for line in text.split_inclusive('\n') {
        match line.trim_start().strip_prefix('#') {
            Some(rest) => header.push_str(rest.trim()),
            None if line.trim().is_empty() => {}
            None => break,
        }
        header.push('\n');
        body_start += line.len();
    }
    let head: RawHeader = toml::from_str(&header).map_err(|e| format_err(path, e.to_string()))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(&text.as_bytes()[body_start..]);
    let mut cols = vec![Vec::new(); head.reps];
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != head.reps {
            return Err(format_err(path, format!("row has {} columns, header says reps = {}", rec.len(), head.reps)));
        }
        for (c, v) in cols.iter_mut().zip(rec.iter()) {
            c.push(v.parse::<f64>().map_err(|e| format_err(path, format!("bad sample {v:?}: {e}")))?);
        }
    }
    Ok((head, cols))
}

/// Write a raw file atomically.
pub fn write_raw_file(path: &Path, header: &RawHeader, columns: &[Vec<f64>]) -> Result<()> {
    if columns.len() != header.reps || columns.iter().any(|c| c.len() != columns[0].len()) {
        return Err(Error::Shape("columns must match reps and share one length".into()));
    }
    let toml = toml::to_string(header).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    for line in toml.lines() {
        writeln!(out, "# {line}")?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record((0..header.reps).map(|r| format!("rep{r}")))?;
        for i in 0..columns.first().map_or(0, Vec::len) {
            w.write_record(columns.iter().map(|c| c[i].to_string()))?;
        }
        w.flush()?;
    }
    write_atomic(path, &out)
}

/// Load a measurement file and the baselines it references.
pub fn load_raw(path: &Path) -> Result<RawMeasurement> {
    let (head, repetitions) = read_raw_file(path)?;
    if head.kind != RawKind::Measurement {
        return Err(format_err(path, "expected kind = \"measurement\""));
    }
    let (Some(k), Some(j), Some(eta)) = (head.k, head.j, head.eta) else {
        return Err(format_err(path, "measurement header needs k, j and eta"));
    };
    if head.baselines.is_empty() {
        return Err(Error::MissingBaseline(path.display().to_string()));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut baselines = Vec::new();
    for rel in &head.baselines {
        let bpath = dir.join(rel);
        if !bpath.exists() {
            return Err(Error::MissingBaseline(bpath.display().to_string()));
        }
        let (bh, cols) = read_raw_file(&bpath)?;
        if bh.kind != RawKind::Baseline {
            return Err(format_err(&bpath, "expected kind = \"baseline\""));
        }
        if bh.fs != head.fs || bh.fd != head.fd {
            return Err(format_err(&bpath, "baseline sample rate or drive frequency differs from the measurement"));
        }
        baselines.push(mean_columns(&cols)?);
    }
    Ok(RawMeasurement {
        key: CondKey::new(k, j),
        fs: head.fs,
        drive: DriveField::new(head.fd, head.bp)?,
        eta,
        iron_mass: head.m_fe,
        repetitions,
        baselines,
    })
}

/// Preprocessed measurements restricted per drive field to the harmonics
/// selected at every viscosity.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub measurements: MeasurementSet,
    pub selections: BTreeMap<usize, HarmonicSet>,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Intersect the per-viscosity selections for each drive field and restrict every spectrum to it.
pub fn combine(pre: BTreeMap<CondKey, Spectrum>, selected: &BTreeMap<CondKey, HarmonicSet>) -> Result<(MeasurementSet, BTreeMap<usize, HarmonicSet>)> {
    let mut selections: BTreeMap<usize, HarmonicSet> = BTreeMap::new();
    for (key, hs) in selected {
        let e = selections.entry(key.k).or_insert_with(|| hs.clone());
        *e = e.intersect(hs);
    }
    if let Some((k, _)) = selections.iter().find(|(_, hs)| hs.is_empty()) {
        return Err(Error::Shape(format!("no harmonic passes SBR selection at every viscosity for drive field {k}")));
    }
    let mut meas = MeasurementSet::new();
    for (key, s) in pre {
        meas.insert(key, s.restrict(&selections[&key.k])?);
    }
    Ok((meas, selections))
}

/// Load and preprocess every measurement file in `dir`, checking each header
/// against `conditions`.
pub fn ingest_dir(dir: &Path, conditions: &ConditionGrid, opts: &SbrOptions) -> Result<Ingested> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let (head, _) = read_raw_file(&path)?;
            if head.kind == RawKind::Measurement {
                paths.push(path);
            }
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyMeasurements);
    }
    let raws: Vec<(PathBuf, RawMeasurement, Preprocessed)> = paths
        .into_par_iter()
        .map(|p| {
            let raw = load_raw(&p)?;
            let pre = preprocess(&raw, opts)?;
            Ok((p, raw, pre))
        })
        .collect::<Result<_>>()?;
    let mut spectra = BTreeMap::new();
    let mut selected = BTreeMap::new();
    let mut iron_mass = None;
    let mut reps = None;
    for (path, raw, pre) in raws {
        let cond = conditions.condition(raw.key)?;
        if !(close(cond.drive.freq, raw.drive.freq) && close(cond.drive.amplitude, raw.drive.amplitude) && close(cond.eta, raw.eta)) {
            return Err(format_err(&path, format!("header does not match condition {}", raw.key)));
        }
        if spectra.insert(raw.key, pre.signal.clone()).is_some() {
            return Err(format_err(&path, format!("duplicate measurement for {}", raw.key)));
        }
        selected.insert(raw.key, pre.selected);
        if let Some(m) = raw.iron_mass {
            if iron_mass.is_some_and(|prev: f64| !close(prev, m)) {
                return Err(format_err(&path, "iron mass differs between files"));
            }
            iron_mass = Some(m);
        }
        reps = Some(reps.map_or(raw.repetitions.len(), |r: usize| r.min(raw.repetitions.len())));
    }
    let (mut measurements, selections) = combine(spectra, &selected)?;
    measurements.iron_mass = iron_mass;
    measurements.repetitions = reps.map(|r| r as u32);
    Ok(Ingested { measurements, selections })
}

/// Write a measurement set as `k,j,m,re,im` rows.
pub fn write_measurement_csv<W: Write>(meas: &MeasurementSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "j", "m", "re", "im"])?;
    for (key, s) in meas.iter() {
        for (m, v) in s.harmonics.indices().iter().zip(&s.values) {
            w.write_record([key.k.to_string(), key.j.to_string(), m.to_string(), v.re.to_string(), v.im.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct HarmonicRow {
    k: usize,
    j: usize,
    m: u32,
    re: f64,
    im: f64,
}

/// Read `k,j,m,re,im` rows; drive frequencies come from `conditions`.
pub fn read_measurement_csv<R: Read>(input: R, conditions: &ConditionGrid) -> Result<MeasurementSet> {
    let mut rows: BTreeMap<CondKey, Vec<(u32, Complex64)>> = BTreeMap::new();
    for row in csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input).deserialize() {
        let r: HarmonicRow = row?;
        rows.entry(CondKey::new(r.k, r.j)).or_default().push((r.m, Complex64::new(r.re, r.im)));
    }
    let mut meas = MeasurementSet::new();
    for (key, mut vals) in rows {
        vals.sort_by_key(|v| v.0);
        let cond = conditions.condition(key)?;
        let hs = HarmonicSet::selection(vals.iter().map(|v| v.0).collect())?;
        meas.insert(key, Spectrum::new(cond.drive.freq, hs, vals.into_iter().map(|v| v.1).collect())?);
    }
    if meas.is_empty() {
        return Err(Error::EmptyMeasurements);
    }
    Ok(meas)
}

/// Generator for a synthetic measurement set.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Ground-truth weights over the dictionary grid.
    pub weights: WeightVector,
    /// Transfer functions per drive field; absent drive fields or harmonics use unit gain.
    pub transfer: TransferSet,
    /// Peak-to-noise-SD ratio at the reference condition; `None` for noiseless data.
    pub snr: Option<f64>,
    pub seed: u64,
    /// Condition whose noiseless peak sets the noise level.
    pub reference: Condition,
    pub sbr: SbrOptions,
    pub fs: f64,
    /// DF periods averaged per acquisition before harmonic extraction.
    pub periods: u32,
}

impl SyntheticSpec {
    /// Identity transfer functions, reference condition 250 Hz / 10 mT / 0.89 mPa·s.
    pub fn new(weights: WeightVector, snr: Option<f64>, seed: u64) -> Self {
        let drive = DriveField { freq: 250.0, amplitude: 10.0 };
        Self {
            weights,
            transfer: TransferSet::new(),
            snr,
            seed,
            reference: Condition { drive, eta: 0.89 },
            sbr: SbrOptions::default(),
            fs: DEFAULT_SAMPLE_RATE,
            periods: DEFAULT_SYNTH_PERIODS,
        }
    }

    fn gain(&self, k: usize, m: u32) -> Complex64 {
        self.transfer.get(&k).and_then(|t| t.gain(m)).unwrap_or(Complex64::new(1.0, 0.0))
    }
}

/// What a synthetic set was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub weights: WeightVector,
    /// Transfer functions over the selected harmonics.
    pub transfer: TransferSet,
    pub noise_sd: f64,
    pub selections: BTreeMap<usize, HarmonicSet>,
    /// Noiseless spectra over the selected harmonics.
    pub noiseless: MeasurementSet,
}

fn find_reference(dicts: &DictionarySet, c: &Condition) -> Option<CondKey> {
    dicts.conditions.keys().find(|&key| {
        dicts.conditions.condition(key).is_ok_and(|d| close(d.drive.freq, c.drive.freq) && close(d.drive.amplitude, c.drive.amplitude) && close(d.eta, c.eta))
    })
}

/// White noise over `periods` periods of `n` samples, folded to one period.
fn noise(seed: u64, stream: u64, n: usize, periods: u32, sd: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let dist = Normal::new(0.0, sd).expect("noise SD is finite and non-negative");
    let mut acc = vec![0.0; n];
    for _ in 0..periods {
        acc.iter_mut().for_each(|a| *a += dist.sample(&mut rng));
    }
    acc.iter_mut().for_each(|a| *a /= periods as f64);
    acc
}

/// Render `TF_k ∘ (A·x)` per condition, add white noise with one SD for all
/// drive fields, and re-select harmonics against a pure-noise baseline.
pub fn synth_generate(spec: &SyntheticSpec, dicts: &DictionarySet) -> Result<(MeasurementSet, GroundTruth)> {
    let reference = find_reference(dicts, &spec.reference)
        .ok_or_else(|| Error::InvalidParameter("reference condition is not in the dictionary set".into()))?;
    if spec.periods == 0 {
        return Err(Error::InvalidParameter("synthetic acquisitions need at least one period".into()));
    }
    if let Some(snr) = spec.snr {
        if !(snr > 0.0 && snr.is_finite()) {
            return Err(Error::InvalidParameter(format!("SNR {snr} must be positive and finite")));
        }
    }
    let mut clean = BTreeMap::new();
    for (key, d) in dicts.iter() {
        let hs = d.harmonics.up_to(spec.sbr.max_harmonic);
        let span = d.restrict(&hs)?.apply(&spec.weights)?;
        let values = span.values.iter().zip(hs.indices()).map(|(v, &m)| v * spec.gain(key.k, m)).collect();
        clean.insert(*key, Spectrum::new(span.fd, hs, values)?);
    }
    let ref_peak = synthesize_time(&clean[&reference], spec.fs)?.samples.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let noise_sd = spec.snr.map_or(0.0, |snr| ref_peak / snr);

    let (pre, selected): (BTreeMap<_, _>, BTreeMap<_, _>) = if noise_sd == 0.0 {
        clean.iter().map(|(k, s)| ((*k, s.clone()), (*k, s.harmonics.clone()))).unzip()
    } else {
        let rows: Vec<(CondKey, Spectrum, HarmonicSet)> = clean
            .par_iter()
            .map(|(key, s)| {
                let t = synthesize_time(s, spec.fs)?;
                let stream = ((key.k as u64) << 33) | ((key.j as u64) << 1);
                let noisy: Vec<f64> = t.samples.iter().zip(noise(spec.seed, stream, t.len(), spec.periods, noise_sd)).map(|(a, b)| a + b).collect();
                let base = noise(spec.seed, stream | 1, t.len(), spec.periods, noise_sd);
                let sig = extract_harmonics(&TimeSignal::new(noisy, spec.fs, t.fd)?, &s.harmonics)?;
                let bspec = extract_harmonics(&TimeSignal::new(base, spec.fs, t.fd)?, &s.harmonics)?;
                let sel = sbr_select(&sig, &bspec, spec.sbr.threshold, spec.sbr.max_harmonic)?;
                Ok((*key, sig, sel))
            })
            .collect::<Result<_>>()?;
        rows.into_iter().map(|(k, s, h)| ((k, s), (k, h))).unzip()
    };
    let (meas, selections) = combine(pre, &selected)?;
    let (noiseless, _) = combine(clean, &selected)?;
    let transfer = selections
        .iter()
        .map(|(&k, hs)| (k, TransferFunction { harmonics: hs.clone(), gains: hs.indices().iter().map(|&m| spec.gain(k, m)).collect() }))
        .collect();
    Ok((meas, GroundTruth { weights: spec.weights.clone(), transfer, noise_sd, selections, noiseless }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::objective;
    use crate::estimator::tests::random_set;
    use proptest::prelude::*;
    use rand::Rng;

    fn spec(fd: f64, tones: &[(u32, f64, f64)]) -> Spectrum {
        let hs = HarmonicSet::selection(tones.iter().map(|t| t.0).collect()).unwrap();
        Spectrum::new(fd, hs, tones.iter().map(|t| Complex64::new(t.1, t.2)).collect()).unwrap()
    }

    #[test]
    fn candidates_respect_cap_and_nyquist() {
        assert_eq!(candidate_harmonics(8000, 101).unwrap().max(), Some(101));
        assert_eq!(candidate_harmonics(20, 101).unwrap().indices(), &[3, 5, 7, 9]);
        assert!(candidate_harmonics(6, 101).unwrap().is_empty());
    }

    #[test]
    fn sbr_examples() {
        let s = spec(250.0, &[(3, 20.0, 0.0), (5, 0.0, 14.0), (7, 16.0, 0.0)]);
        let b = spec(250.0, &[(3, 1.0, 0.0), (5, 1.0, 0.0), (7, 0.0, -1.0)]);
        assert_eq!(sbr_select(&s, &b, 15.0, 101).unwrap().indices(), &[3, 7]);
        assert!(sbr_select(&s, &s, 15.0, 101).unwrap().is_empty());
        let z = Spectrum::zeros(250.0, s.harmonics.clone());
        assert_eq!(sbr_select(&s, &z, 15.0, 101).unwrap(), s.harmonics);
        assert_eq!(sbr_select(&s, &z, 15.0, 5).unwrap().indices(), &[3, 5]);
    }

    proptest! {
        #[test]
        fn sbr_is_monotone(vals in prop::collection::vec((0.0f64..10.0, 0.01f64..1.0), 1..20), t1 in 0.0f64..30.0, dt in 0.0f64..30.0) {
            let hs: Vec<u32> = (0..vals.len() as u32).map(|i| 3 + 2 * i).collect();
            let s = spec(1000.0, &hs.iter().zip(&vals).map(|(&m, v)| (m, v.0, 0.0)).collect::<Vec<_>>());
            let b = spec(1000.0, &hs.iter().zip(&vals).map(|(&m, v)| (m, 0.0, v.1)).collect::<Vec<_>>());
            let lo = sbr_select(&s, &b, t1, 101).unwrap();
            let hi = sbr_select(&s, &b, t1 + dt, 101).unwrap();
            prop_assert!(hi.is_subset_of(&lo));
        }

        #[test]
        fn preprocess_is_linear(seed in any::<u64>(), a in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 40;
            let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
            let (m1, m2, b) = (draw(2 * n), draw(2 * n), draw(n));
            let raw = |reps: Vec<f64>| RawMeasurement {
                key: CondKey::new(0, 0),
                fs: 40_000.0,
                drive: DriveField::new(1000.0, 10.0).unwrap(),
                eta: 0.89,
                iron_mass: None,
                repetitions: vec![reps],
                baselines: vec![b.clone()],
            };
            let opts = SbrOptions::default();
            let p1 = preprocess(&raw(m1.clone()), &opts).unwrap();
            let p2 = preprocess(&raw(m2.clone()), &opts).unwrap();
            // (m1 - b) + a (m2 - b) = (m1 + a m2 - a b) - b
            let mix: Vec<f64> = m1.iter().zip(&m2).zip(b.iter().chain(&b)).map(|((x, y), z)| x + a * y - a * z).collect();
            let pm = preprocess(&raw(mix), &opts).unwrap();
            for i in 0..pm.signal.values.len() {
                let e = p1.signal.values[i] + p2.signal.values[i] * a;
                prop_assert!((pm.signal.values[i] - e).norm() <= 1e-12 * (1.0 + e.norm()));
            }
        }
    }

    fn tone_raw(base: &[f64]) -> (RawMeasurement, Spectrum) {
        let fs = 100_000.0;
        let fd = 1000.0;
        let truth = spec(fd, &[(3, 0.8, -0.25), (9, 0.0, 0.05)]);
        let t = synthesize_time(&truth, fs).unwrap();
        let rep: Vec<f64> = t.samples.iter().cycle().take(3 * t.len()).zip(base.iter().cycle()).map(|(a, b)| a + b).collect();
        let raw = RawMeasurement {
            key: CondKey::new(0, 0),
            fs,
            drive: DriveField::new(fd, 10.0).unwrap(),
            eta: 0.89,
            iron_mass: Some(0.1),
            repetitions: vec![rep.clone(), rep],
            baselines: vec![base.to_vec(), base.iter().cycle().take(2 * base.len()).copied().collect()],
        };
        (raw, truth)
    }

    #[test]
    fn preprocess_recovers_tones() {
        let base: Vec<f64> = (0..100).map(|i| 1e-3 * ((i * 37 % 11) as f64 - 5.0)).collect();
        let (raw, truth) = tone_raw(&base);
        let p = preprocess(&raw, &SbrOptions::default()).unwrap();
        for (&m, v) in p.signal.harmonics.indices().iter().zip(&p.signal.values) {
            let expect = truth.harmonics.position(m).map_or(Complex64::new(0.0, 0.0), |i| truth.values[i]);
            assert!((v - expect).norm() < 1e-12, "m={m}: {v} vs {expect}");
        }
        assert!(p.selected.position(3).is_some());

        let same = RawMeasurement { repetitions: vec![base.clone()], baselines: vec![base.clone()], ..raw.clone() };
        let p = preprocess(&same, &SbrOptions::default()).unwrap();
        assert!(p.signal.values.iter().all(|v| v.norm() == 0.0));
        assert!(p.selected.is_empty());

        assert!(matches!(preprocess(&RawMeasurement { baselines: vec![], ..raw.clone() }, &SbrOptions::default()), Err(Error::MissingBaseline(_))));
        let uneven = RawMeasurement { repetitions: vec![base.clone(), base[..50].to_vec()], ..raw };
        assert!(preprocess(&uneven, &SbrOptions::default()).is_err());
    }

    #[test]
    fn raw_files_round_trip_and_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let base: Vec<f64> = (0..100).map(|i| 1e-4 * ((i * 13 % 7) as f64 - 3.0)).collect();
        let (raw, truth) = tone_raw(&base);
        let bh = RawHeader { kind: RawKind::Baseline, k: None, j: None, fs: raw.fs, fd: 1000.0, bp: 10.0, eta: None, m_fe: None, reps: 1, baselines: vec![] };
        write_raw_file(&dir.path().join("empty.csv"), &bh, std::slice::from_ref(&base)).unwrap();
        let conds = ConditionGrid::new(vec![DriveField::new(1000.0, 10.0).unwrap()], vec![0.89, 2.0]).unwrap();
        for (j, eta) in [0.89, 2.0].into_iter().enumerate() {
            let mh = RawHeader {
                kind: RawKind::Measurement,
                k: Some(0),
                j: Some(j),
                eta: Some(eta),
                m_fe: Some(0.1),
                reps: 2,
                baselines: vec!["empty.csv".into()],
                ..bh.clone()
            };
            write_raw_file(&dir.path().join(format!("m_{j}.csv")), &mh, &raw.repetitions).unwrap();
        }
        let loaded = load_raw(&dir.path().join("m_1.csv")).unwrap();
        assert_eq!(loaded.repetitions, raw.repetitions);
        assert_eq!(loaded.key, CondKey::new(0, 1));

        let ing = ingest_dir(dir.path(), &conds, &SbrOptions::default()).unwrap();
        assert_eq!(ing.measurements.len(), 2);
        assert_eq!(ing.measurements.iron_mass, Some(0.1));
        let s = ing.measurements.get(CondKey::new(0, 0)).unwrap();
        assert!((s.values[s.harmonics.position(3).unwrap()] - truth.values[0]).norm() < 1e-12);

        let mut buf = Vec::new();
        write_measurement_csv(&ing.measurements, &mut buf).unwrap();
        let back = read_measurement_csv(buf.as_slice(), &conds).unwrap();
        for key in ing.measurements.keys() {
            assert_eq!(back.get(key).unwrap(), ing.measurements.get(key).unwrap());
        }

        std::fs::remove_file(dir.path().join("empty.csv")).unwrap();
        assert!(matches!(load_raw(&dir.path().join("m_0.csv")), Err(Error::MissingBaseline(_))));
    }

    // 250 Hz and 500 Hz at 10 mT, viscosities 0.89 and 1.89
    fn small_set(rng: &mut ChaCha8Rng) -> DictionarySet {
        random_set(rng, 2, 2, 5, 6)
    }

    #[test]
    fn noiseless_synthesis_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dicts = small_set(&mut rng);
        let x = WeightVector::delta(5, 2);
        let (meas, truth) = synth_generate(&SyntheticSpec::new(x.clone(), None, 0), &dicts).unwrap();
        assert_eq!(truth.noise_sd, 0.0);
        assert_eq!(meas, truth.noiseless);
        let total: f64 = meas.iter().map(|(_, s)| s.norm_sqr()).sum();
        assert!(objective(&x, &truth.transfer, &dicts, &meas).unwrap() <= 1e-20 * total);

        let mut spec = SyntheticSpec::new(x, None, 0);
        spec.reference.eta = 3.0;
        assert!(synth_generate(&spec, &dicts).is_err());
    }

    #[test]
    fn noisy_synthesis_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dicts = small_set(&mut rng);
        let x = WeightVector::new(vec![0.0, 1.0, 0.0, 0.5, 0.0]).unwrap();
        let spec = SyntheticSpec::new(x.clone(), Some(10.0), 7);
        let (a, ta) = synth_generate(&spec, &dicts).unwrap();
        let (b, _) = synth_generate(&spec, &dicts).unwrap();
        assert_eq!(a, b);
        assert!(ta.noise_sd > 0.0);
        let (c, _) = synth_generate(&SyntheticSpec { seed: 8, ..spec.clone() }, &dicts).unwrap();
        assert_ne!(a, c);
        for k in 0..2 {
            assert_eq!(a.harmonics(k).unwrap(), &ta.selections[&k]);
        }
        // residual energy is the noise carried by the selected harmonics
        let obj = objective(&x, &ta.transfer, &dicts, &a).unwrap();
        let noise: f64 = a.iter().map(|(k, s)| {
            let clean = ta.noiseless.get(*k).unwrap();
            s.values.iter().zip(&clean.values).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>()
        }).sum();
        assert!((obj - noise).abs() <= 1e-9 * noise);
    }
}
