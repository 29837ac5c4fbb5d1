//! Signal and weight-vector evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DriveField, ParticleGrid, TimeSignal, WeightVector};

/// Normalized RMS error in percent: `100·‖v − v̂‖₂ / (√n·(max v − min v))`.
pub fn nrmse(v: &[f64], vhat: &[f64]) -> Result<f64> {
    if v.len() != vhat.len() || v.is_empty() {
        return Err(Error::Shape(format!("nrmse needs equal non-empty lengths, got {} and {}", v.len(), vhat.len())));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if !(range > 0.0) {
        return Err(Error::Metric("reference signal has zero range".into()));
    }
    let err: f64 = v.iter().zip(vhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(100.0 * err / ((v.len() as f64).sqrt() * range))
}

/// Relaxation time as a percentage of the drive period.
pub fn tau_hat(tau: f64, fd: f64) -> f64 {
    100.0 * tau * fd
}

/// Result of [`zero_crossing_time`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroCrossing {
    /// Width between the zero crossings around the main peak, percent of the period.
    pub percent: f64,
    /// Largest other lobe peak relative to the main one.
    pub secondary_peak_ratio: f64,
}

impl ZeroCrossing {
    /// Peak choice is ambiguous when another lobe reaches 90 % of the main one.
    pub fn is_ambiguous(&self) -> bool {
        self.secondary_peak_ratio > 0.9
    }
}

/// Normalized zero-crossing time around the global-magnitude peak of a one-period signal.
///
/// Crossings are located by linear interpolation between samples; the window
/// wraps around because the signal is periodic.
pub fn zero_crossing_time(sig: &TimeSignal) -> Result<ZeroCrossing> {
    let v = &sig.samples;
    let n = v.len();
    if n < 3 {
        return Err(Error::Metric("signal too short".into()));
    }
    let peak = (0..n).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).expect("non-empty");
    if v[peak] == 0.0 {
        return Err(Error::Metric("zero signal has no peak".into()));
    }
    let sign = v[peak].signum();
    let at = |i: isize| v[i.rem_euclid(n as isize) as usize];
    let half = (n / 2) as isize;
    let p = peak as isize;

    let back = (1..=half).find(|&d| sign * at(p - d) <= 0.0).ok_or_else(no_crossing)?;
    let (a, b) = (at(p - back), at(p - back + 1));
    let t_back = (p - back) as f64 + a / (a - b);

    let fwd = (1..=half).find(|&d| sign * at(p + d) <= 0.0).ok_or_else(no_crossing)?;
    let (a, b) = (at(p + fwd - 1), at(p + fwd));
    let t_fwd = (p + fwd - 1) as f64 + a / (a - b);

    // largest |value| outside the main lobe
    let lobe = (p - back + 1)..(p + fwd);
    let secondary = (0..n as isize)
        .filter(|i| !lobe.contains(i) && !lobe.contains(&(i + n as isize)) && !lobe.contains(&(i - n as isize)))
        .map(|i| at(i).abs())
        .fold(0.0, f64::max);

    Ok(ZeroCrossing {
        percent: 100.0 * (t_fwd - t_back) / n as f64,
        secondary_peak_ratio: secondary / v[peak].abs(),
    })
}

fn no_crossing() -> Error {
    Error::Metric("no zero crossing brackets the peak within a half cycle".into())
}

/// Normalized RMS amplitude `(‖v‖₂/√n) / (fd·Bp·mFe)` with fd in kHz, Bp in mT and mFe in g.
pub fn vrms_hat(sig: &TimeSignal, drive: &DriveField, m_fe: f64) -> Result<f64> {
    if !(m_fe > 0.0) {
        return Err(Error::InvalidParameter(format!("iron mass must be positive, got {m_fe}")));
    }
    let rms = (sig.samples.iter().map(|x| x * x).sum::<f64>() / sig.len() as f64).sqrt();
    Ok(rms / (drive.freq * 1e-3 * drive.amplitude * m_fe))
}

/// Probability mass function over an ordered support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    pub support: Vec<f64>,
    pub values: Vec<f64>,
}

impl Pmf {
    /// Normalize non-negative masses to unit sum.
    pub fn from_masses(support: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if support.len() != masses.len() {
            return Err(Error::Shape("support and masses differ in length".into()));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidParameter("masses must be finite and non-negative".into()));
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("PMF needs positive total mass".into()));
        }
        Ok(Self { support, values: masses.into_iter().map(|m| m / total).collect() })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cdf(&self) -> Vec<f64> {
        self.values
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }
}

/// Normalized 1-D Wasserstein distance `‖F₁ − F₂‖₁/(L − 1)` between PMFs on the same support.
/// A single-point support gives 0.
pub fn nwd(p1: &Pmf, p2: &Pmf) -> Result<f64> {
    if p1.len() != p2.len() {
        return Err(Error::Shape(format!("PMF lengths differ: {} vs {}", p1.len(), p2.len())));
    }
    if p1.is_empty() {
        return Err(Error::Shape("NWD of empty PMFs".into()));
    }
    if p1.len() == 1 {
        return Ok(0.0);
    }
    let d: f64 = p1.cdf().iter().zip(p2.cdf()).map(|(a, b)| (a - b).abs()).sum();
    Ok(d / (p1.len() - 1) as f64)
}

/// Marginal distributions of a weight vector over core diameter, hydrodynamic
/// diameter and anisotropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub dc: Pmf,
    pub dh: Pmf,
    pub k: Pmf,
}

impl Marginals {
    /// NWD of each marginal: (dc, dh, K).
    pub fn nwd(&self, other: &Marginals) -> Result<[f64; 3]> {
        Ok([nwd(&self.dc, &other.dc)?, nwd(&self.dh, &other.dh)?, nwd(&self.k, &other.k)?])
    }
}

/// Sorted distinct hydrodynamic diameters `dc + ds` of a grid.
pub fn dh_support(grid: &ParticleGrid) -> Vec<f64> {
    let mut dh: Vec<f64> = grid
        .dc_values()
        .iter()
        .flat_map(|dc| grid.ds_values().iter().map(move |ds| dc + ds))
        .collect();
    dh.sort_by(f64::total_cmp);
    dh.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs().max(1.0));
    dh
}

pub fn marginals(x: &WeightVector, grid: &ParticleGrid) -> Result<Marginals> {
    if x.len() != grid.len() {
        return Err(Error::Shape(format!("{} weights for {} atoms", x.len(), grid.len())));
    }
    let dh_axis = dh_support(grid);
    let mut dc = vec![0.0; grid.dc_values().len()];
    let mut dh = vec![0.0; dh_axis.len()];
    let mut k = vec![0.0; grid.k_values().len()];
    for (i, &w) in x.as_slice().iter().enumerate() {
        let (a, b, c) = grid.axes_of(i);
        dc[a] += w;
        k[c] += w;
        let h = grid.dc_values()[a] + grid.ds_values()[b];
        let pos = dh_axis
            .iter()
            .position(|v| (v - h).abs() <= 1e-9 * h.abs().max(1.0))
            .expect("dh support covers every atom");
        dh[pos] += w;
    }
    Ok(Marginals {
        dc: Pmf::from_masses(grid.dc_values().to_vec(), dc)?,
        dh: Pmf::from_masses(dh_axis, dh)?,
        k: Pmf::from_masses(grid.k_values().to_vec(), k)?,
    })
}

/// Joint PMF over atoms in canonical grid order (support is the atom index).
pub fn joint_pmf(x: &WeightVector, grid: &ParticleGrid) -> Result<Pmf> {
    if x.len() != grid.len() {
        return Err(Error::Shape(format!("{} weights for {} atoms", x.len(), grid.len())));
    }
    Pmf::from_masses((0..x.len()).map(|i| i as f64).collect(), x.as_slice().to_vec())
}

/// One row of a metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub k: usize,
    pub j: usize,
    pub value: f64,
}

/// Write rows as CSV with header `metric,k,j,value`.
pub fn write_metric_csv<W: std::io::Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metric_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricRow>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
