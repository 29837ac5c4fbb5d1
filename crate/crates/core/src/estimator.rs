//! Joint estimation of non-negative dictionary weights and per-drive-field
//! transfer functions by alternating minimization of
//!
//! ```text
//! Σ_k Σ_j ‖ H_k·A(k,j)·x − s(k,j) ‖²,   x ≥ 0,  H_k diagonal
//! ```
//!
//! Each iteration first solves for every `H_k` in closed form (per harmonic),
//! then for `x` with a non-negative least-squares solve on the stacked real and
//! imaginary parts. Both steps are exact block minimizers, so the objective
//! never increases.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dictionary::{CondKey, Dictionary, DictionarySet};
use crate::error::{Error, Result};
use crate::types::{HarmonicSet, Spectrum, WeightVector};

/// Measured spectra per condition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementSet {
    spectra: BTreeMap<CondKey, Spectrum>,
    /// Iron mass of the sample (g).
    pub iron_mass: Option<f64>,
    pub repetitions: Option<u32>,
}

impl MeasurementSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: CondKey, spectrum: Spectrum) {
        self.spectra.insert(key, spectrum);
    }

    pub fn get(&self, key: CondKey) -> Option<&Spectrum> {
        self.spectra.get(&key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CondKey, &Spectrum)> {
        self.spectra.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = CondKey> + '_ {
        self.spectra.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.spectra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectra.is_empty()
    }

    /// Drive-field indices present.
    pub fn drive_indices(&self) -> BTreeSet<usize> {
        self.spectra.keys().map(|k| k.k).collect()
    }

    /// Viscosity indices present.
    pub fn viscosity_indices(&self) -> BTreeSet<usize> {
        self.spectra.keys().map(|k| k.j).collect()
    }

    /// Copy without any measurement at viscosity index `j`.
    pub fn without_viscosity(&self, j: usize) -> Self {
        Self {
            spectra: self.spectra.iter().filter(|(k, _)| k.j != j).map(|(k, s)| (*k, s.clone())).collect(),
            ..self.clone()
        }
    }

    /// Copy with viscosity indices relabeled by `map` (old → new).
    pub fn relabel_viscosities(&self, map: &BTreeMap<usize, usize>) -> Self {
        Self {
            spectra: self.spectra.iter().map(|(k, s)| (CondKey::new(k.k, *map.get(&k.j).unwrap_or(&k.j)), s.clone())).collect(),
            ..self.clone()
        }
    }

    /// Harmonics shared by every measurement at drive field `k`.
    pub fn harmonics(&self, k: usize) -> Result<&HarmonicSet> {
        let mut it = self.spectra.iter().filter(|(key, _)| key.k == k).map(|(_, s)| &s.harmonics);
        let first = it.next().ok_or_else(|| Error::Shape(format!("no measurement at drive field {k}")))?;
        if it.any(|h| h != first) {
            return Err(Error::Shape(format!("measurements at drive field {k} use different harmonics")));
        }
        Ok(first)
    }
}

/// Diagonal of `H_k`: one complex gain per selected harmonic.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    pub harmonics: HarmonicSet,
    pub gains: Vec<Complex64>,
}

impl TransferFunction {
    pub fn identity(harmonics: &HarmonicSet) -> Self {
        Self { harmonics: harmonics.clone(), gains: vec![Complex64::new(1.0, 0.0); harmonics.len()] }
    }

    pub fn gain(&self, harmonic: u32) -> Option<Complex64> {
        self.harmonics.position(harmonic).map(|i| self.gains[i])
    }

    /// Elementwise `H ∘ s`.
    pub fn apply(&self, s: &Spectrum) -> Result<Spectrum> {
        if s.harmonics != self.harmonics {
            return Err(Error::Shape("transfer function and spectrum harmonics differ".into()));
        }
        Spectrum::new(s.fd, s.harmonics.clone(), s.values.iter().zip(&self.gains).map(|(v, h)| v * h).collect())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { harmonics: self.harmonics.clone(), gains: self.gains.iter().map(|g| g * factor).collect() }
    }
}

/// Transfer functions keyed by drive-field index.
pub type TransferSet = BTreeMap<usize, TransferFunction>;

/// Harmonic whose spanned signal vanished, so its gain could not be estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Degenerate {
    pub k: usize,
    pub harmonic: u32,
}

fn dictionary_for<'a>(dicts: &'a DictionarySet, key: CondKey, hs: &HarmonicSet) -> Result<std::borrow::Cow<'a, Dictionary>> {
    let d = dicts.get(key)?;
    if &d.harmonics == hs {
        Ok(std::borrow::Cow::Borrowed(d))
    } else if hs.is_subset_of(&d.harmonics) {
        Ok(std::borrow::Cow::Owned(d.restrict(hs)?))
    } else {
        Err(Error::Shape(format!("measurement harmonics at {key} are not covered by the dictionary")))
    }
}

/// Dictionaries aligned with the measurement harmonics, one per measured condition.
fn aligned(dicts: &DictionarySet, meas: &MeasurementSet) -> Result<BTreeMap<CondKey, Dictionary>> {
    let mut out = BTreeMap::new();
    for (key, s) in meas.iter() {
        let hs = meas.harmonics(key.k)?;
        let d = dictionary_for(dicts, *key, hs)?;
        if d.cond.drive.freq != s.fd {
            return Err(Error::Shape(format!("measurement at {key} has fd {} but dictionary {}", s.fd, d.cond.drive.freq)));
        }
        out.insert(*key, d.into_owned());
    }
    Ok(out)
}

fn objective_aligned(x: &WeightVector, h: &TransferSet, dicts: &BTreeMap<CondKey, Dictionary>, meas: &MeasurementSet) -> Result<f64> {
    let mut total = 0.0;
    for (key, s) in meas.iter() {
        let tf = h.get(&key.k).ok_or_else(|| Error::Shape(format!("no transfer function for drive field {}", key.k)))?;
        let fitted = tf.apply(&dicts[key].apply(x)?)?;
        total += fitted.values.iter().zip(&s.values).map(|(f, m)| (f - m).norm_sqr()).sum::<f64>();
    }
    Ok(total)
}

/// `Σ_k Σ_j ‖H_k·A(k,j)·x − s(k,j)‖²` over the measured conditions.
pub fn objective(x: &WeightVector, h: &TransferSet, dicts: &DictionarySet, meas: &MeasurementSet) -> Result<f64> {
    objective_aligned(x, h, &aligned(dicts, meas)?, meas)
}

/// Closed-form least-squares gains per `(k, m)`:
/// `H = Σ_j conj(S̃)·S / Σ_j |S̃|²`, with `S̃` the spanned and `S` the measured spectrum.
///
/// Harmonics with a vanishing denominator get `H = 0` and are reported.
pub fn tf_update(spanned: &BTreeMap<CondKey, Spectrum>, meas: &MeasurementSet) -> Result<(TransferSet, Vec<Degenerate>)> {
    let mut num: BTreeMap<usize, (HarmonicSet, Vec<Complex64>, Vec<f64>)> = BTreeMap::new();
    for (key, s) in meas.iter() {
        let sp = spanned.get(key).ok_or_else(|| Error::Shape(format!("no spanned spectrum for {key}")))?;
        if sp.harmonics != s.harmonics {
            return Err(Error::Shape(format!("spanned and measured harmonics differ at {key}")));
        }
        let entry = num
            .entry(key.k)
            .or_insert_with(|| (s.harmonics.clone(), vec![Complex64::new(0.0, 0.0); s.values.len()], vec![0.0; s.values.len()]));
        if entry.0 != s.harmonics {
            return Err(Error::Shape(format!("measurements at drive field {} use different harmonics", key.k)));
        }
        for (i, (a, b)) in sp.values.iter().zip(&s.values).enumerate() {
            entry.1[i] += a.conj() * b;
            entry.2[i] += a.norm_sqr();
        }
    }
    let mut degenerate = Vec::new();
    let tfs = num
        .into_iter()
        .map(|(k, (hs, n, d))| {
            let gains = n
                .iter()
                .zip(&d)
                .zip(hs.indices())
                .map(|((n, &d), &m)| {
                    if d > 0.0 {
                        n / d
                    } else {
                        degenerate.push(Degenerate { k, harmonic: m });
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect();
            (k, TransferFunction { harmonics: hs, gains })
        })
        .collect();
    Ok((tfs, degenerate))
}

/// Termination tolerance `factor·‖A‖₁·‖b‖₁` (matrix 1-norm: largest column sum).
pub fn default_tolerance(a: &DMatrix<f64>, b: &DVector<f64>, factor: f64) -> f64 {
    let col_norm = a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    factor * col_norm * b.iter().map(|v| v.abs()).sum::<f64>()
}

/// Options for [`nnls`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NnlsOptions {
    /// Dual tolerance; `None` uses `1e-9·‖A‖₁·‖b‖₁`.
    pub tol: Option<f64>,
    /// Iteration cap; `None` uses `10·N`.
    pub max_iter: Option<usize>,
}

/// Least squares on the columns in `set`.
fn solve_on(a: &DMatrix<f64>, b: &DVector<f64>, set: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(set);
    let svd = sub.svd(true, true);
    let eps = f64::EPSILON * a.nrows().max(set.len()) as f64 * svd.singular_values.max();
    svd.solve(b, eps).expect("SVD computed with both factors")
}

/// Non-negative least squares `min ‖A·x − b‖², x ≥ 0` (Lawson–Hanson active set).
///
/// `warm` seeds the passive set with the support of a previous solution, which
/// must be non-negative. The result satisfies [`kkt_holds`] at the tolerance used.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, opts: NnlsOptions, warm: Option<&[f64]>) -> Result<WeightVector> {
    let n = a.ncols();
    if b.len() != a.nrows() {
        return Err(Error::Shape(format!("{} rows but {} right-hand values", a.nrows(), b.len())));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Shape("NNLS inputs must be finite".into()));
    }
    let tol = opts.tol.unwrap_or_else(|| default_tolerance(a, b, 1e-9));
    let cap = opts.max_iter.unwrap_or(10 * n).max(1);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    if let Some(w) = warm {
        if w.len() != n || w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Shape("warm start must be a non-negative vector of length N".into()));
        }
        for (i, &v) in w.iter().enumerate() {
            if v > 0.0 {
                x[i] = v;
                passive[i] = true;
            }
        }
    }
    let mut iterations = 0;
    let mut need_solve = passive.iter().any(|p| *p);
    // indices whose entry stalled numerically; cleared whenever x moves
    let mut stalled = vec![false; n];
    let mut added = None;
    loop {
        if !need_solve {
            let grad = a.tr_mul(&(b - a * &x));
            let pick = (0..n).filter(|&i| !passive[i] && !stalled[i]).max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
            match pick {
                Some(i) if grad[i] > tol => {
                    passive[i] = true;
                    added = Some(i);
                }
                _ => break,
            }
        }
        need_solve = false;
        // inner loop: move toward the unconstrained solution on the passive set
        loop {
            iterations += 1;
            if iterations > cap {
                return Err(Error::NnlsNotConverged { iterations: cap, best: x.iter().map(|v| v.max(0.0)).collect() });
            }
            let set: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            if set.is_empty() {
                break;
            }
            let z = solve_on(a, b, &set);
            if z.iter().all(|&v| v > 0.0) {
                for (&i, &v) in set.iter().zip(z.iter()) {
                    x[i] = v;
                }
                stalled.iter_mut().for_each(|s| *s = false);
                break;
            }
            let (mut alpha, mut blocking) = (1.0f64, None);
            for (&i, &v) in set.iter().zip(z.iter()) {
                if v <= 0.0 {
                    let r = if x[i] - v > 0.0 { x[i] / (x[i] - v) } else { 0.0 };
                    if r < alpha {
                        alpha = r;
                        blocking = Some(i);
                    }
                }
            }
            if let (true, Some(i)) = (alpha == 0.0 && blocking == added, blocking) {
                // the new index cannot enter; leave x unchanged
                passive[i] = false;
                stalled[i] = true;
                break;
            }
            for (&i, &v) in set.iter().zip(z.iter()) {
                x[i] += alpha * (v - x[i]);
            }
            if let Some(i) = blocking {
                x[i] = 0.0;
            }
            for &i in &set {
                if x[i] <= 0.0 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if alpha > 0.0 {
                stalled.iter_mut().for_each(|s| *s = false);
            }
        }
        added = None;
    }
    WeightVector::new(x.iter().map(|v| v.max(0.0)).collect())
}

/// Largest KKT violation of `x` for `min ‖A·x − b‖², x ≥ 0`: `|g_i|` on the
/// support, `max(0, −g_i)` elsewhere, with `g = Aᵀ(A·x − b)`.
pub fn kkt_violation(a: &DMatrix<f64>, b: &DVector<f64>, x: &[f64]) -> f64 {
    let xv = DVector::from_column_slice(x);
    let g = a.tr_mul(&(a * xv - b));
    x.iter().zip(g.iter()).map(|(&xi, &gi)| if xi > 0.0 { gi.abs() } else { (-gi).max(0.0) }).fold(0.0, f64::max)
}

/// Whether `x` satisfies the KKT conditions within `tol`, including `x ≥ 0`.
pub fn kkt_holds(a: &DMatrix<f64>, b: &DVector<f64>, x: &[f64], tol: f64) -> bool {
    x.iter().all(|v| *v >= 0.0) && kkt_violation(a, b, x) <= tol
}

/// Real stacked system `[Re; Im]` of `H_k·A(k,j)` and `s(k,j)` over all measured conditions.
fn stack(dicts: &BTreeMap<CondKey, Dictionary>, h: &TransferSet, meas: &MeasurementSet) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = dicts.values().next().map(|d| d.cols()).unwrap_or(0);
    let rows: usize = meas.iter().map(|(_, s)| 2 * s.values.len()).sum();
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    let mut r0 = 0;
    for (key, s) in meas.iter() {
        let d = &dicts[key];
        let tf = h.get(&key.k).ok_or_else(|| Error::Shape(format!("no transfer function for drive field {}", key.k)))?;
        let m = s.values.len();
        for (i, v) in s.values.iter().enumerate() {
            b[r0 + i] = v.re;
            b[r0 + m + i] = v.im;
        }
        for c in 0..n {
            for (i, (av, g)) in d.column(c).iter().zip(&tf.gains).enumerate() {
                let p = g * av;
                a[(r0 + i, c)] = p.re;
                a[(r0 + m + i, c)] = p.im;
            }
        }
        r0 += 2 * m;
    }
    Ok((a, b))
}

fn weight_update_aligned(
    dicts: &BTreeMap<CondKey, Dictionary>,
    h: &TransferSet,
    meas: &MeasurementSet,
    tol_factor: f64,
    warm: Option<&WeightVector>,
) -> Result<WeightVector> {
    let (a, b) = stack(dicts, h, meas)?;
    let tol = default_tolerance(&a, &b, tol_factor);
    nnls(&a, &b, NnlsOptions { tol: Some(tol), max_iter: None }, warm.map(|w| w.as_slice()))
}

/// Non-negative weights minimizing the objective for fixed transfer functions.
/// `tol_factor` scales the NNLS tolerance `tol_factor·‖Ā‖₁·‖s̄‖₁`.
pub fn weight_update(dicts: &DictionarySet, h: &TransferSet, meas: &MeasurementSet, tol_factor: f64) -> Result<WeightVector> {
    weight_update_aligned(&aligned(dicts, meas)?, h, meas, tol_factor, None)
}

/// Settings for [`joint_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateOptions {
    pub max_iter: usize,
    /// Stop once the relative objective decrease stays below `stagnation` for
    /// `patience` consecutive iterations. Disable to always run `max_iter`.
    pub early_stop: bool,
    pub stagnation: f64,
    pub patience: usize,
    /// NNLS tolerance factor.
    pub tol_factor: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { max_iter: 2000, early_stop: true, stagnation: 1e-12, patience: 5, tol_factor: 1e-9 }
    }
}

impl EstimateOptions {
    /// Exactly `max_iter` iterations, no early stop.
    pub fn fixed(max_iter: usize) -> Self {
        Self { max_iter, early_stop: false, ..Self::default() }
    }
}

/// Output of [`joint_estimate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub weights: WeightVector,
    pub transfer: TransferSet,
    /// Objective after each full iteration.
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
    /// Whether the stagnation criterion was met.
    pub converged: bool,
    pub degenerate: Vec<Degenerate>,
}

/// Spanned spectra `A(k,j)·x` for every measured condition.
fn spanned_all(dicts: &BTreeMap<CondKey, Dictionary>, x: &WeightVector) -> Result<BTreeMap<CondKey, Spectrum>> {
    dicts.iter().map(|(k, d)| Ok((*k, d.apply(x)?))).collect()
}

/// Alternating minimization from a uniform unit-sum weight vector.
pub fn joint_estimate(dicts: &DictionarySet, meas: &MeasurementSet, opts: &EstimateOptions) -> Result<EstimationResult> {
    if meas.is_empty() {
        return Err(Error::EmptyMeasurements);
    }
    if opts.max_iter == 0 {
        return Err(Error::InvalidOptions("max_iter must be at least 1".into()));
    }
    let aligned = aligned(dicts, meas)?;
    let n = dicts.grid().len();
    let mut x = WeightVector::uniform(n);
    let mut transfer = TransferSet::new();
    let mut trace: Vec<f64> = Vec::with_capacity(opts.max_iter.min(10_000));
    let mut degenerate = BTreeSet::new();
    let mut flat = 0;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let (h, deg) = tf_update(&spanned_all(&aligned, &x)?, meas)?;
        degenerate.extend(deg);
        transfer = h;
        x = match weight_update_aligned(&aligned, &transfer, meas, opts.tol_factor, Some(&x)) {
            Ok(x) => x,
            Err(Error::NnlsNotConverged { best, .. }) => {
                log::warn!("NNLS hit its iteration cap; keeping the best iterate");
                WeightVector::new(best)?
            }
            Err(e) => return Err(e),
        };
        let f = objective_aligned(&x, &transfer, &aligned, meas)?;
        if let Some(&prev) = trace.last() {
            let rel = (prev - f) / prev.abs().max(f64::MIN_POSITIVE);
            flat = if rel < opts.stagnation { flat + 1 } else { 0 };
        }
        trace.push(f);
        if flat >= opts.patience || f == 0.0 {
            converged = true;
            if opts.early_stop {
                break;
            }
        }
    }
    for d in &degenerate {
        log::warn!("harmonic {} at drive field {} has no spanned signal; its gain was set to 0", d.harmonic, d.k);
    }
    Ok(EstimationResult {
        weights: x,
        transfer,
        iterations_run: trace.len(),
        objective_trace: trace,
        converged,
        degenerate: degenerate.into_iter().collect(),
    })
}

/// Rescale `(x, H)` to `(α·x, H/α)` so that `|H_ref_k(ref_harmonic)| = 1`.
pub fn normalize_solution(result: &EstimationResult, ref_k: usize, ref_harmonic: u32) -> Result<EstimationResult> {
    let zero = Error::ZeroReference { k: ref_k, harmonic: ref_harmonic };
    let g = result
        .transfer
        .get(&ref_k)
        .and_then(|tf| tf.gain(ref_harmonic))
        .ok_or_else(|| Error::Shape(format!("no gain for harmonic {ref_harmonic} at drive field {ref_k}")))?;
    let alpha = g.norm();
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(zero);
    }
    Ok(EstimationResult {
        weights: result.weights.scaled(alpha)?,
        transfer: result.transfer.iter().map(|(k, tf)| (*k, tf.scaled(1.0 / alpha))).collect(),
        ..result.clone()
    })
}

/// Serializable view of an [`EstimationResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    /// Weights in canonical grid order.
    pub weights: Vec<f64>,
    pub transfer_functions: Vec<TransferReport>,
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub degenerate: Vec<Degenerate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub k: usize,
    pub harmonics: Vec<u32>,
    pub magnitude_db: Vec<f64>,
    pub phase_rad: Vec<f64>,
    /// Exact gains, for lossless reloading.
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<&EstimationResult> for EstimationReport {
    fn from(r: &EstimationResult) -> Self {
        Self {
            weights: r.weights.as_slice().to_vec(),
            transfer_functions: r
                .transfer
                .iter()
                .map(|(k, tf)| TransferReport {
                    k: *k,
                    harmonics: tf.harmonics.indices().to_vec(),
                    magnitude_db: tf.gains.iter().map(|g| 20.0 * g.norm().log10()).collect(),
                    phase_rad: tf.gains.iter().map(|g| g.arg()).collect(),
                    re: tf.gains.iter().map(|g| g.re).collect(),
                    im: tf.gains.iter().map(|g| g.im).collect(),
                })
                .collect(),
            objective_trace: r.objective_trace.clone(),
            iterations_run: r.iterations_run,
            converged: r.converged,
            degenerate: r.degenerate.clone(),
        }
    }
}

impl TryFrom<EstimationReport> for EstimationResult {
    type Error = Error;

    fn try_from(r: EstimationReport) -> Result<Self> {
        let transfer = r
            .transfer_functions
            .into_iter()
            .map(|t| {
                if t.re.len() != t.harmonics.len() || t.im.len() != t.harmonics.len() {
                    return Err(Error::Shape(format!("transfer function {} has mismatched lengths", t.k)));
                }
                let gains = t.re.iter().zip(&t.im).map(|(re, im)| Complex64::new(*re, *im)).collect();
                Ok((t.k, TransferFunction { harmonics: HarmonicSet::selection(t.harmonics)?, gains }))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            weights: WeightVector::new(r.weights)?,
            transfer,
            objective_trace: r.objective_trace,
            iterations_run: r.iterations_run,
            converged: r.converged,
            degenerate: r.degenerate,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dictionary::ConditionGrid;
    use crate::types::{DriveField, ParticleGrid};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random dictionary set over `drives × viscosities` with `n` atoms.
    pub(crate) fn random_set(rng: &mut ChaCha8Rng, drives: usize, viscosities: usize, n: usize, m: u32) -> DictionarySet {
        let grid = ParticleGrid::new((1..=n).map(|v| v as f64).collect(), vec![10.0], vec![1.0]).unwrap();
        let conds = ConditionGrid::new(
            (0..drives).map(|k| DriveField::new(250.0 * (k + 1) as f64, 10.0).unwrap()).collect(),
            (0..viscosities).map(|j| 0.89 + j as f64).collect(),
        )
        .unwrap();
        let hs = HarmonicSet::odd_up_to(2 * m + 1).unwrap();
        let dicts = conds
            .keys()
            .map(|key| {
                let data = (0..hs.len() * n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
                (key, Dictionary::from_parts(key, conds.condition(key).unwrap(), hs.clone(), grid.clone(), data, None).unwrap())
            })
            .collect();
        DictionarySet::new(conds, dicts).unwrap()
    }

    pub(crate) fn synth(dicts: &DictionarySet, x: &WeightVector, h: &TransferSet) -> MeasurementSet {
        let mut meas = MeasurementSet::new();
        for (key, d) in dicts.iter() {
            meas.insert(*key, h[&key.k].apply(&d.apply(x).unwrap()).unwrap());
        }
        meas
    }

    pub(crate) fn identity_tfs(dicts: &DictionarySet) -> TransferSet {
        (0..dicts.conditions.drives.len()).map(|k| (k, TransferFunction::identity(dicts.harmonics(k).unwrap()))).collect()
    }

    /// Exhaustive NNLS oracle: best feasible unconstrained LS over all supports.
    pub(crate) fn nnls_enumerate(a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
        let n = a.ncols();
        let mut best = b.norm_squared();
        for mask in 1u32..(1 << n) {
            let set: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let z = a.select_columns(&set).svd(true, true).solve(b, 1e-14).unwrap();
            if z.iter().all(|v| *v >= 0.0) {
                best = best.min((a.select_columns(&set) * z - b).norm_squared());
            }
        }
        best
    }

    #[test]
    fn nnls_examples() {
        let a = DMatrix::identity(2, 2);
        let x = nnls(&a, &DVector::from_vec(vec![3.0, -1.0]), NnlsOptions::default(), None).unwrap();
        assert_eq!(x.as_slice(), &[3.0, 0.0]);
        let a = DMatrix::from_vec(2, 1, vec![1.0, 1.0]);
        let x = nnls(&a, &DVector::from_vec(vec![1.0, 2.0]), NnlsOptions::default(), None).unwrap();
        assert!((x.as_slice()[0] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn nnls_iteration_cap_reports_best() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.3, 1.0, 0.2, 0.1, 0.4, 1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let err = nnls(&a, &b, NnlsOptions { tol: None, max_iter: Some(1) }, None).unwrap_err();
        assert!(matches!(err, Error::NnlsNotConverged { iterations: 1, .. }));
    }

    #[test]
    fn nnls_warm_start_gives_same_answer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(12, 5, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let cold = nnls(&a, &b, NnlsOptions::default(), None).unwrap();
        let warm = nnls(&a, &b, NnlsOptions::default(), Some(&[0.5, 0.0, 0.2, 1.0, 0.0])).unwrap();
        let f = |x: &WeightVector| (&a * DVector::from_column_slice(x.as_slice()) - &b).norm_squared();
        assert!((f(&cold) - f(&warm)).abs() <= 1e-12 * (1.0 + f(&cold)));
    }

    #[test]
    fn tf_update_examples() {
        let hs = HarmonicSet::new(vec![3, 5]).unwrap();
        let sp = Spectrum::new(1000.0, hs.clone(), vec![Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.3)]).unwrap();
        let s = Spectrum::new(1000.0, hs.clone(), vec![Complex64::new(0.3, -1.0), Complex64::new(2.0, 0.1)]).unwrap();
        let mut meas = MeasurementSet::new();
        meas.insert(CondKey::new(0, 0), s.clone());
        let spanned = BTreeMap::from([(CondKey::new(0, 0), sp.clone())]);
        let (h, deg) = tf_update(&spanned, &meas).unwrap();
        assert!(deg.is_empty());
        for i in 0..2 {
            assert!((h[&0].gains[i] - s.values[i] / sp.values[i]).norm() < 1e-15);
        }

        // zero spanned harmonic → H = 0 and a warning
        let zero = Spectrum::new(1000.0, hs.clone(), vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]).unwrap();
        let (h, deg) = tf_update(&BTreeMap::from([(CondKey::new(0, 0), zero)]), &meas).unwrap();
        assert_eq!(h[&0].gains[0], Complex64::new(0.0, 0.0));
        assert_eq!(deg, vec![Degenerate { k: 0, harmonic: 3 }]);
    }

    #[test]
    fn objective_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dicts = random_set(&mut rng, 2, 3, 4, 3);
        let x = WeightVector::new((0..4).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let h: TransferSet = (0..2)
            .map(|k| {
                let hs = dicts.harmonics(k).unwrap().clone();
                let gains = (0..hs.len()).map(|_| Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
                (k, TransferFunction { harmonics: hs, gains })
            })
            .collect();
        let mut meas = MeasurementSet::new();
        for (key, d) in dicts.iter() {
            let vals = (0..d.rows()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            meas.insert(*key, Spectrum::new(d.cond.drive.freq, d.harmonics.clone(), vals).unwrap());
        }
        let mut naive = 0.0;
        for (key, d) in dicts.iter() {
            for r in 0..d.rows() {
                let mut acc = Complex64::new(0.0, 0.0);
                for c in 0..d.cols() {
                    acc += h[&key.k].gains[r] * d.get(r, c) * x.as_slice()[c];
                }
                naive += (acc - meas.get(*key).unwrap().values[r]).norm_sqr();
            }
        }
        let f = objective(&x, &h, &dicts, &meas).unwrap();
        assert!((f - naive).abs() <= 1e-12 * naive);

        let exact = synth(&dicts, &x, &h);
        assert!(objective(&x, &h, &dicts, &exact).unwrap() <= 1e-20 * exact.iter().map(|(_, s)| s.norm_sqr()).sum::<f64>());
        let zero_meas = synth(&dicts, &WeightVector::zeros(4), &h);
        assert_eq!(objective(&WeightVector::zeros(4), &h, &dicts, &zero_meas).unwrap(), 0.0);
    }

    #[test]
    fn weight_update_examples() {
        // orthonormal real columns with identity H recover x0
        let grid = ParticleGrid::new(vec![1.0, 2.0, 3.0], vec![0.0], vec![0.0]).unwrap();
        let conds = ConditionGrid::new(vec![DriveField::new(1000.0, 10.0).unwrap()], vec![1.0]).unwrap();
        let hs = HarmonicSet::odd_up_to(9).unwrap();
        let mut data = vec![Complex64::new(0.0, 0.0); 12];
        data[0] = Complex64::new(1.0, 0.0);
        data[4 + 1] = Complex64::new(1.0, 0.0);
        data[8 + 3] = Complex64::new(1.0, 0.0);
        let key = CondKey::new(0, 0);
        let d = Dictionary::from_parts(key, conds.condition(key).unwrap(), hs, grid, data, None).unwrap();
        let dicts = DictionarySet::new(conds, BTreeMap::from([(key, d)])).unwrap();
        let h = identity_tfs(&dicts);
        let x0 = WeightVector::new(vec![0.4, 0.0, 2.5]).unwrap();
        let meas = synth(&dicts, &x0, &h);
        let x = weight_update(&dicts, &h, &meas, 1e-9).unwrap();
        for (a, b) in x.as_slice().iter().zip(x0.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
        let zero = synth(&dicts, &WeightVector::zeros(3), &h);
        assert_eq!(weight_update(&dicts, &h, &zero, 1e-9).unwrap().as_slice(), &[0.0; 3]);
    }

    #[test]
    fn weight_update_two_atom_oracle() {
        // complex two-atom case: compare with direct minimization over x ≥ 0 via enumeration
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let dicts = random_set(&mut rng, 1, 2, 2, 4);
            let h = identity_tfs(&dicts);
            let mut meas = MeasurementSet::new();
            for (key, d) in dicts.iter() {
                let vals = (0..d.rows()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
                meas.insert(*key, Spectrum::new(d.cond.drive.freq, d.harmonics.clone(), vals).unwrap());
            }
            let x = weight_update(&dicts, &h, &meas, 1e-12).unwrap();
            let f = objective(&x, &h, &dicts, &meas).unwrap();
            // complex normal equations on each support
            let mut best = objective(&WeightVector::zeros(2), &h, &dicts, &meas).unwrap();
            let (mut g11, mut g22, mut g12, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (key, d) in dicts.iter() {
                let s = meas.get(*key).unwrap();
                for r in 0..d.rows() {
                    let (a1, a2, sv) = (d.get(r, 0), d.get(r, 1), s.values[r]);
                    g11 += a1.norm_sqr();
                    g22 += a2.norm_sqr();
                    g12 += (a1.conj() * a2).re;
                    r1 += (a1.conj() * sv).re;
                    r2 += (a2.conj() * sv).re;
                }
            }
            let det = g11 * g22 - g12 * g12;
            let candidates = [
                vec![r1 / g11, 0.0],
                vec![0.0, r2 / g22],
                vec![(g22 * r1 - g12 * r2) / det, (g11 * r2 - g12 * r1) / det],
            ];
            for c in candidates {
                if c.iter().all(|v| *v >= 0.0) {
                    best = best.min(objective(&WeightVector::new(c).unwrap(), &h, &dicts, &meas).unwrap());
                }
            }
            assert!((f - best).abs() <= 1e-10 * (1.0 + best), "{f} vs {best}");
        }
    }

    #[test]
    fn joint_estimate_recovers_single_atom() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dicts = random_set(&mut rng, 2, 3, 6, 5);
        let x0 = WeightVector::delta(6, 4);
        let meas = synth(&dicts, &x0, &identity_tfs(&dicts));
        let r = joint_estimate(&dicts, &meas, &EstimateOptions::default()).unwrap();
        let r = normalize_solution(&r, 0, 3).unwrap();
        let total = r.weights.sum();
        assert!(r.weights.as_slice()[4] / total > 1.0 - 1e-6);
        for w in r.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-300);
        }
    }

    #[test]
    fn empty_measurements_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dicts = random_set(&mut rng, 1, 1, 2, 2);
        assert!(matches!(joint_estimate(&dicts, &MeasurementSet::new(), &EstimateOptions::default()), Err(Error::EmptyMeasurements)));
    }

    #[test]
    fn normalization_and_report_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dicts = random_set(&mut rng, 2, 2, 5, 4);
        let x0 = WeightVector::new(vec![0.0, 1.0, 0.5, 0.0, 0.0]).unwrap();
        let h0: TransferSet = identity_tfs(&dicts).into_iter().map(|(k, tf)| (k, tf.scaled(3.0 + k as f64))).collect();
        let meas = synth(&dicts, &x0, &h0);
        let r = joint_estimate(&dicts, &meas, &EstimateOptions::fixed(50)).unwrap();
        assert_eq!(r.iterations_run, 50);
        let n = normalize_solution(&r, 1, 5).unwrap();
        assert!((n.transfer[&1].gain(5).unwrap().norm() - 1.0).abs() < 1e-14);
        // idempotent, and invariant to a prior manual rescale
        let again = normalize_solution(&n, 1, 5).unwrap();
        let manual = EstimationResult {
            weights: r.weights.scaled(7.3).unwrap(),
            transfer: r.transfer.iter().map(|(k, t)| (*k, t.scaled(1.0 / 7.3))).collect(),
            ..r.clone()
        };
        let from_manual = normalize_solution(&manual, 1, 5).unwrap();
        for (a, b) in again.weights.as_slice().iter().zip(from_manual.weights.as_slice()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
        let report = EstimationReport::from(&n);
        let json = serde_json::to_string(&report).unwrap();
        let back = EstimationResult::try_from(serde_json::from_str::<EstimationReport>(&json).unwrap()).unwrap();
        assert_eq!(back, n);
        assert!(report.transfer_functions[1].magnitude_db[report.transfer_functions[1].harmonics.iter().position(|&m| m == 5).unwrap()].abs() < 1e-12);
    }

    #[test]
    fn zero_reference_gain_rejected() {
        let hs = HarmonicSet::new(vec![3]).unwrap();
        let r = EstimationResult {
            weights: WeightVector::uniform(1),
            transfer: BTreeMap::from([(0, TransferFunction { harmonics: hs, gains: vec![Complex64::new(0.0, 0.0)] })]),
            objective_trace: vec![],
            iterations_run: 0,
            converged: false,
            degenerate: vec![],
        };
        assert!(matches!(normalize_solution(&r, 0, 3), Err(Error::ZeroReference { k: 0, harmonic: 3 })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn nnls_matches_enumeration_and_kkt(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            let x = nnls(&a, &b, NnlsOptions::default(), None).unwrap();
            let f = (&a * DVector::from_column_slice(x.as_slice()) - &b).norm_squared();
            prop_assert!((f - nnls_enumerate(&a, &b)).abs() <= 1e-8);
            prop_assert!(kkt_holds(&a, &b, x.as_slice(), default_tolerance(&a, &b, 1e-9)));
        }

        #[test]
        fn scale_invariance_of_objective(seed in any::<u64>(), alpha in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dicts = random_set(&mut rng, 1, 2, 3, 3);
            let x = WeightVector::new((0..3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let h = identity_tfs(&dicts);
            let meas = synth(&dicts, &WeightVector::uniform(3), &h);
            let f = objective(&x, &h, &dicts, &meas).unwrap();
            let hs: TransferSet = h.iter().map(|(k, t)| (*k, t.scaled(1.0 / alpha))).collect();
            let g = objective(&x.scaled(alpha).unwrap(), &hs, &dicts, &meas).unwrap();
            prop_assert!((f - g).abs() <= 1e-12 * (1.0 + f));
        }

        #[test]
        fn viscosity_labels_do_not_matter(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dicts = random_set(&mut rng, 1, 3, 4, 3);
            let x0 = WeightVector::new(vec![0.0, 1.0, 0.3, 0.0]).unwrap();
            let meas = synth(&dicts, &x0, &identity_tfs(&dicts));
            // swap the labels of viscosities 0 and 2 in both dictionaries and measurements
            let map = BTreeMap::from([(0, 2), (2, 0), (1, 1)]);
            let swapped: BTreeMap<CondKey, Dictionary> = dicts
                .iter()
                .map(|(key, d)| {
                    let nk = CondKey::new(key.k, map[&key.j]);
                    let mut nd = d.clone();
                    nd.key = nk;
                    nd.cond = dicts.conditions.condition(nk).unwrap();
                    (nk, nd)
                })
                .collect();
            let dicts2 = DictionarySet::new(dicts.conditions.clone(), swapped).unwrap();
            let meas2 = meas.relabel_viscosities(&map);
            let opts = EstimateOptions::fixed(30);
            let a = joint_estimate(&dicts, &meas, &opts).unwrap();
            let b = joint_estimate(&dicts2, &meas2, &opts).unwrap();
            for (p, q) in a.weights.as_slice().iter().zip(b.weights.as_slice()) {
                prop_assert!((p - q).abs() <= 1e-9 * (1.0 + p.abs()));
            }
            for (ta, tb) in a.transfer.values().zip(b.transfer.values()) {
                for (p, q) in ta.gains.iter().zip(&tb.gains) {
                    prop_assert!((p - q).norm() <= 1e-9 * (1.0 + p.norm()));
                }
            }
        }
    }
}
