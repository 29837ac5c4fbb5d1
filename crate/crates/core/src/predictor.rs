//! Spanned, fitted and predicted spectra, and leave-one-viscosity-out prediction.
//!
//! * spanned: `A(k,j)·x`, the signal explained by the dictionary alone
//! * fitted: `H_k ∘ (A(k,j)·x)` at a viscosity used for estimation
//! * predicted: `H_k ∘ (A(k,e)·x)` with `A(k,e)` built at a held-out viscosity
//!
//! Time-domain renderings keep only the selected harmonics, so they compare
//! filtered signals with the fundamental removed.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{write_atomic, CondKey, Dictionary, DictionarySet};
use crate::error::{Error, Result};
use crate::estimator::{joint_estimate, EstimateOptions, EstimationReport, EstimationResult, MeasurementSet, TransferFunction, TransferSet};
use crate::metrics::{marginals, nrmse, vrms_hat, zero_crossing_time, MetricRow};
use crate::spectral::synthesize_time;
use crate::types::{ParticleGrid, Spectrum, TimeSignal, WeightVector};

fn aligned_to<'a>(dict: &'a Dictionary, tf: &TransferFunction) -> Result<std::borrow::Cow<'a, Dictionary>> {
    if dict.harmonics == tf.harmonics {
        Ok(std::borrow::Cow::Borrowed(dict))
    } else {
        Ok(std::borrow::Cow::Owned(dict.restrict(&tf.harmonics)?))
    }
}

/// `A·x`.
pub fn spanned(dict: &Dictionary, x: &WeightVector) -> Result<Spectrum> {
    dict.apply(x)
}

/// `H_k ∘ (A·x)`; the dictionary is restricted to the harmonics of `h` when needed.
pub fn fitted(dict: &Dictionary, x: &WeightVector, h: &TransferFunction) -> Result<Spectrum> {
    h.apply(&aligned_to(dict, h)?.apply(x)?)
}

/// Prediction with a dictionary built at an untested viscosity.
pub fn predict(new_dict: &Dictionary, x: &WeightVector, h: &TransferSet, training_grid: &ParticleGrid) -> Result<Spectrum> {
    if &new_dict.grid != training_grid {
        return Err(Error::Shape("prediction dictionary uses a different particle grid".into()));
    }
    let tf = h
        .get(&new_dict.key.k)
        .ok_or_else(|| Error::Shape(format!("no transfer function for drive field {}", new_dict.key.k)))?;
    fitted(new_dict, x, tf)
}

/// One predicted (or fitted) condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub k: usize,
    pub j: usize,
    /// Drive frequency (Hz), amplitude (mT), viscosity (mPa·s).
    pub fd: f64,
    pub bp: f64,
    pub eta: f64,
    pub spanned: Spectrum,
    pub predicted: Spectrum,
    pub measured: Option<Spectrum>,
}

impl PredictionEntry {
    pub fn key(&self) -> CondKey {
        CondKey::new(self.k, self.j)
    }
}

/// Predictions for a set of conditions from one estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    /// Held-out viscosity index; `None` for a fit on all data.
    pub excluded: Option<usize>,
    pub estimate: EstimationReport,
    pub entries: Vec<PredictionEntry>,
    pub metrics: Vec<MetricRow>,
    /// Output sample rate of the renderings (S/s).
    pub fs: f64,
}

/// Time-domain renderings of one entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Renderings {
    pub spanned: TimeSignal,
    pub predicted: TimeSignal,
    pub measured: Option<TimeSignal>,
}

impl PredictionReport {
    pub fn render(&self, entry: &PredictionEntry) -> Result<Renderings> {
        Ok(Renderings {
            spanned: synthesize_time(&entry.spanned, self.fs)?,
            predicted: synthesize_time(&entry.predicted, self.fs)?,
            measured: entry.measured.as_ref().map(|m| synthesize_time(m, self.fs)).transpose()?,
        })
    }

    /// Largest predicted-vs-measured NRMSE (%) over the entries.
    pub fn max_nrmse(&self) -> Option<f64> {
        self.metrics.iter().filter(|r| r.metric == "nrmse").map(|r| r.value).reduce(f64::max)
    }

    /// Metric rows as CSV.
    pub fn metrics_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        crate::metrics::write_metric_csv(&self.metrics, &mut buf)?;
        Ok(buf)
    }

    /// Rendered signals of one entry as CSV with columns `time, measured, predicted, spanned`.
    pub fn signal_csv(&self, entry: &PredictionEntry) -> Result<Vec<u8>> {
        let r = self.render(entry)?;
        let mut out = Vec::new();
        writeln!(out, "time,measured,predicted,spanned")?;
        for i in 0..r.predicted.len() {
            let measured = r.measured.as_ref().map(|m| m.samples[i].to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", i as f64 / self.fs, measured, r.predicted.samples[i], r.spanned.samples[i])?;
        }
        Ok(out)
    }

    /// Write `report.json`, `metrics.csv` and one `signal_k{k}_j{j}.csv` per entry into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("report.json"), &serde_json::to_vec_pretty(self)?)?;
        write_atomic(&dir.join("metrics.csv"), &self.metrics_csv()?)?;
        for e in &self.entries {
            write_atomic(&dir.join(format!("signal_k{}_j{}.csv", e.k, e.j)), &self.signal_csv(e)?)?;
        }
        Ok(())
    }
}

/// Spanned and fitted/predicted spectra at `keys`, with metrics against any
/// measurements present in `meas`.
pub fn report(
    dicts: &DictionarySet,
    meas: &MeasurementSet,
    estimate: &EstimationResult,
    keys: &[CondKey],
    excluded: Option<usize>,
    fs: f64,
) -> Result<PredictionReport> {
    let mut entries = Vec::with_capacity(keys.len());
    let mut metrics = Vec::new();
    for &key in keys {
        let dict = dicts.get(key)?;
        let tf = estimate
            .transfer
            .get(&key.k)
            .ok_or_else(|| Error::Shape(format!("no transfer function for drive field {}", key.k)))?;
        let d = aligned_to(dict, tf)?;
        let span = d.apply(&estimate.weights)?;
        let predicted = tf.apply(&span)?;
        let measured = meas.get(key).map(|m| m.restrict(&tf.harmonics)).transpose()?;
        let entry = PredictionEntry {
            k: key.k,
            j: key.j,
            fd: dict.cond.drive.freq,
            bp: dict.cond.drive.amplitude,
            eta: dict.cond.eta,
            spanned: span,
            predicted,
            measured,
        };
        let row = |metric: &str, value: f64| MetricRow { metric: metric.into(), k: key.k, j: key.j, value };
        let pred_t = synthesize_time(&entry.predicted, fs)?;
        if let Ok(z) = zero_crossing_time(&pred_t) {
            metrics.push(row("tzc_predicted", z.percent));
        }
        if let Some(m) = meas.iron_mass {
            metrics.push(row("vrms_predicted", vrms_hat(&pred_t, &dict.cond.drive, m)?));
        }
        if let Some(ms) = &entry.measured {
            let meas_t = synthesize_time(ms, fs)?;
            metrics.push(row("nrmse", nrmse(&meas_t.samples, &pred_t.samples)?));
            if let Ok(z) = zero_crossing_time(&meas_t) {
                metrics.push(row("tzc_measured", z.percent));
            }
            if let Some(m) = meas.iron_mass {
                metrics.push(row("vrms_measured", vrms_hat(&meas_t, &dict.cond.drive, m)?));
            }
        }
        entries.push(entry);
    }
    Ok(PredictionReport { excluded, estimate: EstimationReport::from(estimate), entries, metrics, fs })
}

/// Estimate without viscosity `excluded_j`, then predict every drive field at that viscosity.
pub fn leave_one_out(
    dicts: &DictionarySet,
    meas: &MeasurementSet,
    excluded_j: usize,
    opts: &EstimateOptions,
    fs: f64,
) -> Result<(EstimationResult, PredictionReport)> {
    let levels = meas.viscosity_indices();
    if levels.len() < 2 {
        return Err(Error::InvalidParameter("leave-one-out needs at least two viscosity levels".into()));
    }
    if excluded_j >= dicts.conditions.viscosities.len() {
        return Err(Error::Shape(format!("no viscosity {excluded_j} in the dictionary set")));
    }
    let train = meas.without_viscosity(excluded_j);
    let estimate = joint_estimate(dicts, &train, opts)?;
    let keys: Vec<CondKey> = meas.drive_indices().into_iter().map(|k| CondKey::new(k, excluded_j)).collect();
    let report = report(dicts, meas, &estimate, &keys, Some(excluded_j), fs)?;
    Ok((estimate, report))
}

/// Every leave-one-out exclusion plus the all-data reference estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LooSweep {
    pub reference: EstimationResult,
    pub reports: Vec<PredictionReport>,
    /// Rows `nwd_dc`, `nwd_dh`, `nwd_k` with `k = 0` and `j` the excluded level.
    pub weight_nwd: Vec<MetricRow>,
}

/// Run [`leave_one_out`] for each measured viscosity (in parallel) and compare
/// each weight vector's marginals with the all-data estimate.
pub fn loo_sweep(dicts: &DictionarySet, meas: &MeasurementSet, opts: &EstimateOptions, fs: f64) -> Result<LooSweep> {
    let reference = joint_estimate(dicts, meas, opts)?;
    let grid = dicts.grid();
    let ref_marg = marginals(&reference.weights, grid)?;
    let levels: Vec<usize> = meas.viscosity_indices().into_iter().collect();
    let runs: Vec<(EstimationResult, PredictionReport)> =
        levels.par_iter().map(|&j| leave_one_out(dicts, meas, j, opts, fs)).collect::<Result<_>>()?;
    let mut weight_nwd = Vec::new();
    for (&j, (est, _)) in levels.iter().zip(&runs) {
        let d = marginals(&est.weights, grid)?.nwd(&ref_marg)?;
        for (name, v) in ["nwd_dc", "nwd_dh", "nwd_k"].iter().zip(d) {
            weight_nwd.push(MetricRow { metric: name.to_string(), k: 0, j, value: v });
        }
    }
    Ok(LooSweep { reference, reports: runs.into_iter().map(|r| r.1).collect(), weight_nwd })
}

/// Recovery errors of an estimate against the synthetic ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthComparison {
    /// NWD of the dc, dh and K marginals.
    pub nwd: [f64; 3],
    /// NRMSE (%) of the fitted signal against the noiseless signal, per condition.
    pub fitted_nrmse: Vec<MetricRow>,
    /// Largest `| |Ĥ| − |H| | / |H|` and `|∠Ĥ − ∠H|` (rad) after matching the weight sums.
    pub tf_magnitude_error: f64,
    pub tf_phase_error: f64,
}

impl TruthComparison {
    pub fn max_fitted_nrmse(&self) -> f64 {
        self.fitted_nrmse.iter().map(|r| r.value).fold(0.0, f64::max)
    }
}

/// Compare an estimate with the generator of a synthetic measurement set.
///
/// The estimate is rescaled so its weights sum like the true weights before
/// transfer functions are compared.
pub fn compare_with_truth(
    dicts: &DictionarySet,
    truth: &crate::signalio::GroundTruth,
    estimate: &EstimationResult,
    fs: f64,
) -> Result<TruthComparison> {
    let grid = dicts.grid();
    let nwd = marginals(&estimate.weights, grid)?.nwd(&marginals(&truth.weights, grid)?)?;
    let alpha = estimate.weights.sum() / truth.weights.sum();
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Metric("estimated weights are all zero".into()));
    }
    let mut mag: f64 = 0.0;
    let mut phase: f64 = 0.0;
    for (k, t) in &truth.transfer {
        let e = estimate.transfer.get(k).ok_or_else(|| Error::Shape(format!("no estimated transfer function for drive field {k}")))?;
        for (&m, g) in t.harmonics.indices().iter().zip(&t.gains) {
            let ge = e.gain(m).ok_or_else(|| Error::Shape(format!("no estimated gain at harmonic {m}")))? * alpha;
            mag = mag.max((ge.norm() - g.norm()).abs() / g.norm());
            let d = (ge.arg() - g.arg() + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
            phase = phase.max(d.abs());
        }
    }
    let mut fitted_nrmse = Vec::new();
    for (key, clean) in truth.noiseless.iter() {
        let tf = &estimate.transfer[&key.k];
        let fit = fitted(dicts.get(*key)?, &estimate.weights, tf)?;
        let a = synthesize_time(clean, fs)?;
        let b = synthesize_time(&fit, fs)?;
        fitted_nrmse.push(MetricRow { metric: "fitted_nrmse".into(), k: key.k, j: key.j, value: nrmse(&a.samples, &b.samples)? });
    }
    Ok(TruthComparison { nwd, fitted_nrmse, tf_magnitude_error: mag, tf_phase_error: phase })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::tests::{identity_tfs, random_set, synth};
    use crate::estimator::TransferFunction;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FS: f64 = 200_000.0;

    #[test]
    fn spanned_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let set = random_set(&mut rng, 1, 1, 5, 4);
        let d = set.get(CondKey::new(0, 0)).unwrap();
        assert_eq!(spanned(d, &WeightVector::delta(5, 3)).unwrap().values, d.column(3));
        assert!(spanned(d, &WeightVector::zeros(5)).unwrap().values.iter().all(|v| v.norm() == 0.0));
        let x = WeightVector::new((0..5).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap();
        let s = spanned(d, &x).unwrap();
        for r in 0..d.rows() {
            let naive: Complex64 = (0..5).map(|c| d.get(r, c) * x.as_slice()[c]).sum();
            assert!((s.values[r] - naive).norm() <= 1e-12 * (1.0 + naive.norm()));
        }
        assert!(spanned(d, &WeightVector::zeros(4)).is_err());
    }

    #[test]
    fn fitted_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let set = random_set(&mut rng, 1, 1, 3, 3);
        let d = set.get(CondKey::new(0, 0)).unwrap();
        let x = WeightVector::uniform(3);
        let ones = TransferFunction::identity(&d.harmonics);
        assert_eq!(fitted(d, &x, &ones).unwrap(), spanned(d, &x).unwrap());
        let zeros = ones.scaled(0.0);
        assert!(fitted(d, &x, &zeros).unwrap().values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn predict_checks_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_set(&mut rng, 1, 1, 3, 3);
        let b = random_set(&mut rng, 1, 1, 4, 3);
        let h = identity_tfs(&a);
        let err = predict(b.get(CondKey::new(0, 0)).unwrap(), &WeightVector::uniform(4), &h, a.grid());
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn noiseless_leave_one_out_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dicts = random_set(&mut rng, 2, 3, 6, 5);
        let x0 = WeightVector::new(vec![0.0, 0.7, 0.0, 0.0, 0.3, 0.0]).unwrap();
        let meas = synth(&dicts, &x0, &identity_tfs(&dicts));
        let sweep = loo_sweep(&dicts, &meas, &EstimateOptions::default(), FS).unwrap();
        assert_eq!(sweep.reports.len(), 3);
        for r in &sweep.reports {
            assert!(r.max_nrmse().unwrap() < 1e-6, "{:?}", r.max_nrmse());
        }
        assert!(sweep.weight_nwd.iter().all(|row| row.value < 1e-6));
        assert!(leave_one_out(&dicts, &meas.without_viscosity(0).without_viscosity(1), 2, &EstimateOptions::default(), FS).is_err());
    }

    #[test]
    fn truth_comparison_of_exact_fit_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dicts = random_set(&mut rng, 2, 2, 4, 3);
        let x0 = WeightVector::new(vec![0.0, 0.2, 0.0, 0.8]).unwrap();
        let spec = crate::signalio::SyntheticSpec::new(x0, None, 0);
        let (meas, truth) = crate::signalio::synth_generate(&spec, &dicts).unwrap();
        let est = joint_estimate(&dicts, &meas, &EstimateOptions::default()).unwrap();
        let cmp = compare_with_truth(&dicts, &truth, &est, FS).unwrap();
        assert!(cmp.nwd.iter().all(|v| *v < 1e-6), "{:?}", cmp.nwd);
        assert!(cmp.max_fitted_nrmse() < 1e-6);
        assert!(cmp.tf_magnitude_error < 1e-6 && cmp.tf_phase_error < 1e-6);
        let scaled = EstimationResult {
            weights: est.weights.scaled(5.0).unwrap(),
            transfer: est.transfer.iter().map(|(k, t)| (*k, t.scaled(0.2))).collect(),
            ..est.clone()
        };
        let again = compare_with_truth(&dicts, &truth, &scaled, FS).unwrap();
        assert!((again.tf_magnitude_error - cmp.tf_magnitude_error).abs() < 1e-9);
    }

    #[test]
    fn report_round_trip_and_files() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let dicts = random_set(&mut rng, 1, 2, 4, 3);
        let x0 = WeightVector::new(vec![0.0, 1.0, 0.0, 0.5]).unwrap();
        let mut meas = synth(&dicts, &x0, &identity_tfs(&dicts));
        meas.iron_mass = Some(0.5);
        let (_, rep) = leave_one_out(&dicts, &meas, 1, &EstimateOptions::default(), FS).unwrap();
        let json = serde_json::to_string(&rep).unwrap();
        assert_eq!(serde_json::from_str::<PredictionReport>(&json).unwrap(), rep);
        assert!(rep.metrics.iter().any(|r| r.metric == "vrms_measured"));
        let dir = tempfile::tempdir().unwrap();
        rep.write_dir(dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("signal_k0_j1.csv")).unwrap();
        assert!(csv.starts_with("time,measured,predicted,spanned\n"));
        assert_eq!(csv.lines().count(), 1 + (FS / 250.0) as usize);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prediction_is_linear_and_scale_free(seed in any::<u64>(), a in 0.0f64..3.0, b in 0.0f64..3.0, alpha in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = random_set(&mut rng, 1, 2, 4, 3);
            let d = set.get(CondKey::new(0, 1)).unwrap();
            let h: TransferSet = identity_tfs(&set).into_iter().map(|(k, t)| {
                let gains = t.gains.iter().map(|_| Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
                (k, TransferFunction { harmonics: t.harmonics, gains })
            }).collect();
            let x1 = WeightVector::new((0..4).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let x2 = WeightVector::new((0..4).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let mix = WeightVector::new(x1.as_slice().iter().zip(x2.as_slice()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let p1 = predict(d, &x1, &h, set.grid()).unwrap();
            let p2 = predict(d, &x2, &h, set.grid()).unwrap();
            let pm = predict(d, &mix, &h, set.grid()).unwrap();
            for i in 0..pm.values.len() {
                let e = p1.values[i] * a + p2.values[i] * b;
                prop_assert!((pm.values[i] - e).norm() <= 1e-12 * (1.0 + e.norm()));
            }
            let hs: TransferSet = h.iter().map(|(k, t)| (*k, t.scaled(1.0 / alpha))).collect();
            let ps = predict(d, &x1.scaled(alpha).unwrap(), &hs, set.grid()).unwrap();
            for (p, q) in ps.values.iter().zip(&p1.values) {
                prop_assert!((p - q).norm() <= 1e-12 * (1.0 + q.norm()));
            }
            // composition: predicting at a training dictionary equals the fit
            prop_assert_eq!(predict(d, &x1, &h, set.grid()).unwrap(), fitted(d, &x1, &h[&0]).unwrap());
        }
    }
}
