//! Domain types shared by every stage of the pipeline.
//!
//! Quantities are stored in the units used for the parameter tables
//! (nm, kJ/m³, mT, mPa·s) and converted to SI through the accessor methods,
//! which is the only place unit conversion happens.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default receive sample rate, 2 MS/s.
pub const DEFAULT_SAMPLE_RATE: f64 = 2.0e6;

/// Physical constants used by the magnetization models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConstants {
    /// Saturation magnetization (A/m).
    pub ms: f64,
    /// Temperature (K).
    pub temperature: f64,
    /// Gilbert damping.
    pub alpha: f64,
    /// Gyromagnetic ratio (rad/(s·T)).
    pub gamma: f64,
    /// Vacuum permeability (T·m/A).
    pub mu0: f64,
    /// Boltzmann constant (J/K).
    pub kb: f64,
    /// Néel attempt time (s); only used for step-size bounds.
    pub tau0: f64,
}

impl Default for SimConstants {
    fn default() -> Self {
        Self {
            ms: 360.0e3,
            temperature: 298.5,
            alpha: 0.1,
            gamma: 1.75e11,
            mu0: 1.256_637_062_12e-6,
            kb: 1.380_649e-23,
            tau0: 1.0e-10,
        }
    }
}

impl SimConstants {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("ms", self.ms),
            ("temperature", self.temperature),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("mu0", self.mu0),
            ("kb", self.kb),
            ("tau0", self.tau0),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Thermal energy kB·T (J).
    pub fn kt(&self) -> f64 {
        self.kb * self.temperature
    }
}

/// One dictionary atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleParams {
    /// Magnetic core diameter (nm).
    pub dc: f64,
    /// Surface coating diameter (nm).
    pub ds: f64,
    /// Uniaxial anisotropy constant (kJ/m³).
    pub k: f64,
}

impl ParticleParams {
    pub fn new(dc: f64, ds: f64, k: f64) -> Result<Self> {
        if !(dc.is_finite() && dc > 0.0) {
            return Err(Error::InvalidParameter(format!("core diameter must be positive, got {dc}")));
        }
        if !(ds.is_finite() && ds >= 0.0) {
            return Err(Error::InvalidParameter(format!("coating diameter must be non-negative, got {ds}")));
        }
        if !(k.is_finite() && k >= 0.0) {
            return Err(Error::InvalidParameter(format!("anisotropy must be non-negative, got {k}")));
        }
        Ok(Self { dc, ds, k })
    }

    /// Hydrodynamic diameter dc + ds (nm).
    pub fn dh(&self) -> f64 {
        self.dc + self.ds
    }

    /// Core volume (m³).
    pub fn core_volume(&self) -> f64 {
        sphere_volume(self.dc * 1e-9)
    }

    /// Hydrodynamic volume (m³).
    pub fn hydro_volume(&self) -> f64 {
        sphere_volume(self.dh() * 1e-9)
    }

    /// Anisotropy constant in J/m³.
    pub fn anisotropy_si(&self) -> f64 {
        self.k * 1e3
    }
}

fn sphere_volume(d: f64) -> f64 {
    std::f64::consts::PI * d * d * d / 6.0
}

/// Cartesian grid of particle parameters.
///
/// Canonical atom order is dc outermost, ds in the middle and K innermost:
/// `index = (i_dc * |ds| + i_ds) * |K| + i_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleGrid {
    dc: Vec<f64>,
    ds: Vec<f64>,
    k: Vec<f64>,
}

impl ParticleGrid {
    pub fn new(dc: Vec<f64>, ds: Vec<f64>, k: Vec<f64>) -> Result<Self> {
        for (name, axis) in [("dc", &dc), ("ds", &ds), ("K", &k)] {
            if axis.is_empty() {
                return Err(Error::InvalidGrid(format!("{name} axis is empty")));
            }
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidGrid(format!("{name} axis has non-finite values")));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidGrid(format!("{name} axis must be strictly ascending")));
            }
        }
        if dc[0] <= 0.0 || ds[0] < 0.0 || k[0] < 0.0 {
            return Err(Error::InvalidGrid("axis values out of physical range".into()));
        }
        Ok(Self { dc, ds, k })
    }

    /// Parameter ranges used for the full-size dictionaries:
    /// dc 5..30 nm (step 1), ds 15..100 nm (step 5), K 1..10 kJ/m³ (step 1).
    pub fn table1() -> Self {
        let dc = (5..=30).map(f64::from).collect();
        let ds = (3..=20).map(|i| 5.0 * f64::from(i)).collect();
        let k = (1..=10).map(f64::from).collect();
        Self::new(dc, ds, k).expect("static grid is valid")
    }

    pub fn dc_values(&self) -> &[f64] {
        &self.dc
    }

    pub fn ds_values(&self) -> &[f64] {
        &self.ds
    }

    pub fn k_values(&self) -> &[f64] {
        &self.k
    }

    /// Number of atoms N.
    pub fn len(&self) -> usize {
        self.dc.len() * self.ds.len() * self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Canonical index of the atom with axis indices `(i_dc, i_ds, i_k)`.
    pub fn index_of(&self, i_dc: usize, i_ds: usize, i_k: usize) -> usize {
        (i_dc * self.ds.len() + i_ds) * self.k.len() + i_k
    }

    /// Axis indices of atom `index`.
    pub fn axes_of(&self, index: usize) -> (usize, usize, usize) {
        let nk = self.k.len();
        let nds = self.ds.len();
        (index / (nds * nk), (index / nk) % nds, index % nk)
    }

    pub fn atom(&self, index: usize) -> ParticleParams {
        let (a, b, c) = self.axes_of(index);
        ParticleParams { dc: self.dc[a], ds: self.ds[b], k: self.k[c] }
    }

    /// Canonical index of the atom with exactly these parameters, if present.
    pub fn find(&self, dc: f64, ds: f64, k: f64) -> Option<usize> {
        let pos = |axis: &[f64], v: f64| axis.iter().position(|&a| (a - v).abs() <= 1e-9 * a.abs().max(1.0));
        Some(self.index_of(pos(&self.dc, dc)?, pos(&self.ds, ds)?, pos(&self.k, k)?))
    }
}

/// Enumerate every atom of `grid` in canonical order.
pub fn enumerate_grid(grid: &ParticleGrid) -> Vec<ParticleParams> {
    (0..grid.len()).map(|i| grid.atom(i)).collect()
}

/// Total number of single-atom simulations needed for a dictionary set.
pub fn count_simulations(grid: &ParticleGrid, conditions: usize) -> u64 {
    grid.len() as u64 * conditions as u64
}

/// Sinusoidal drive field `B(t) = Bp·sin(2π·fd·t)` along z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveField {
    /// Frequency (Hz).
    pub freq: f64,
    /// Peak amplitude (mT).
    pub amplitude: f64,
}

impl DriveField {
    pub fn new(freq: f64, amplitude: f64) -> Result<Self> {
        if !(freq.is_finite() && freq > 0.0 && amplitude.is_finite() && amplitude > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "drive field needs positive frequency and amplitude, got {freq} Hz / {amplitude} mT"
            )));
        }
        Ok(Self { freq, amplitude })
    }

    pub fn period(&self) -> f64 {
        1.0 / self.freq
    }

    /// Peak flux density μ0·H in tesla.
    pub fn amplitude_tesla(&self) -> f64 {
        self.amplitude * 1e-3
    }

    /// Instantaneous μ0·H(t) in tesla.
    pub fn field_at(&self, t: f64) -> f64 {
        self.amplitude_tesla() * (std::f64::consts::TAU * self.freq * t).sin()
    }

    pub fn samples_per_period(&self, fs: f64) -> usize {
        (fs / self.freq).round() as usize
    }
}

/// A (drive field, viscosity) pair indexing one dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub drive: DriveField,
    /// Dynamic viscosity (mPa·s).
    pub eta: f64,
}

impl Condition {
    pub fn new(drive: DriveField, eta: f64) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidParameter(format!("viscosity must be positive, got {eta}")));
        }
        Ok(Self { drive, eta })
    }

    /// Viscosity in Pa·s.
    pub fn eta_si(&self) -> f64 {
        self.eta * 1e-3
    }
}

/// Ordered odd harmonic numbers, fundamental excluded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct HarmonicSet(Vec<u32>);

impl HarmonicSet {
    pub fn new(indices: Vec<u32>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidParameter("harmonic set is empty".into()));
        }
        Self::selection(indices)
    }

    /// Like [`HarmonicSet::new`] but allows an empty result, as produced by
    /// harmonic selection that rejects every candidate.
    pub fn selection(indices: Vec<u32>) -> Result<Self> {
        if indices.iter().any(|&m| m < 3 || m % 2 == 0) {
            return Err(Error::InvalidParameter(format!("harmonics must be odd and >= 3: {indices:?}")));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("harmonics must be strictly increasing".into()));
        }
        Ok(Self(indices))
    }

    /// {3, 5, ..., max_odd} with `max_odd` the largest odd number ≤ `max`.
    pub fn odd_up_to(max: u32) -> Result<Self> {
        Self::new((3..=max).step_by(2).collect())
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> Option<u32> {
        self.0.last().copied()
    }

    pub fn position(&self, harmonic: u32) -> Option<usize> {
        self.0.binary_search(&harmonic).ok()
    }

    /// True when every harmonic of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &HarmonicSet) -> bool {
        self.0.iter().all(|m| other.position(*m).is_some())
    }

    /// Harmonics not above `max`.
    pub fn up_to(&self, max: u32) -> HarmonicSet {
        HarmonicSet(self.0.iter().copied().filter(|&m| m <= max).collect())
    }

    pub fn intersect(&self, other: &HarmonicSet) -> HarmonicSet {
        HarmonicSet(self.0.iter().copied().filter(|m| other.position(*m).is_some()).collect())
    }
}

impl TryFrom<Vec<u32>> for HarmonicSet {
    type Error = Error;

    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::selection(v)
    }
}

impl From<HarmonicSet> for Vec<u32> {
    fn from(h: HarmonicSet) -> Self {
        h.0
    }
}

/// Complex harmonic amplitudes aligned with a [`HarmonicSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpectrumRecord", into = "SpectrumRecord")]
pub struct Spectrum {
    /// Fundamental frequency (Hz) of the drive field this spectrum belongs to.
    pub fd: f64,
    pub harmonics: HarmonicSet,
    pub values: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(fd: f64, harmonics: HarmonicSet, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != harmonics.len() {
            return Err(Error::Shape(format!(
                "spectrum has {} values for {} harmonics",
                values.len(),
                harmonics.len()
            )));
        }
        Ok(Self { fd, harmonics, values })
    }

    pub fn zeros(fd: f64, harmonics: HarmonicSet) -> Self {
        let values = vec![Complex64::new(0.0, 0.0); harmonics.len()];
        Self { fd, harmonics, values }
    }

    /// Keep only the harmonics in `subset` (which must be contained in `self.harmonics`).
    pub fn restrict(&self, subset: &HarmonicSet) -> Result<Self> {
        let values = subset
            .indices()
            .iter()
            .map(|m| {
                self.harmonics
                    .position(*m)
                    .map(|i| self.values[i])
                    .ok_or_else(|| Error::Shape(format!("harmonic {m} not present in spectrum")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { fd: self.fd, harmonics: subset.clone(), values })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpectrumRecord {
    fd: f64,
    harmonics: Vec<u32>,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl TryFrom<SpectrumRecord> for Spectrum {
    type Error = Error;

    fn try_from(r: SpectrumRecord) -> Result<Self> {
        if r.re.len() != r.im.len() {
            return Err(Error::Shape("real and imaginary parts differ in length".into()));
        }
        let values = r.re.iter().zip(&r.im).map(|(a, b)| Complex64::new(*a, *b)).collect();
        Spectrum::new(r.fd, HarmonicSet::selection(r.harmonics)?, values)
    }
}

impl From<Spectrum> for SpectrumRecord {
    fn from(s: Spectrum) -> Self {
        Self {
            fd: s.fd,
            re: s.values.iter().map(|v| v.re).collect(),
            im: s.values.iter().map(|v| v.im).collect(),
            harmonics: s.harmonics.into(),
        }
    }
}

/// One period of a uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    pub samples: Vec<f64>,
    /// Sample rate (S/s).
    pub fs: f64,
    /// Fundamental frequency (Hz); the signal spans exactly one period of it.
    pub fd: f64,
}

impl TimeSignal {
    pub fn new(samples: Vec<f64>, fs: f64, fd: f64) -> Result<Self> {
        if !(fs > 0.0 && fd > 0.0) {
            return Err(Error::InvalidParameter("sample rate and frequency must be positive".into()));
        }
        let expected = (fs / fd).round() as usize;
        if samples.len() != expected {
            return Err(Error::Shape(format!(
                "one period at fs={fs} and fd={fd} needs {expected} samples, got {}",
                samples.len()
            )));
        }
        Ok(Self { samples, fs, fd })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fs
    }

    pub fn period(&self) -> f64 {
        1.0 / self.fd
    }
}

/// Non-negative dictionary weights in canonical atom order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be finite and non-negative".into()));
        }
        Ok(Self(x))
    }

    /// Uniform weights with unit sum.
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Unit weight on atom `index`.
    pub fn delta(n: usize, index: usize) -> Self {
        let mut x = vec![0.0; n];
        x[index] = 1.0;
        Self(x)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * alpha).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}
