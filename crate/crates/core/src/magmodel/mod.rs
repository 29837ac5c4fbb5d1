//! Magnetization response of a non-interacting particle ensemble under a drive field.
//!
//! Four models are available:
//!
//! * [`ModelKind::LangevinEquilibrium`]: instantaneous equilibrium, `M = Ms·L(ξ)`.
//! * [`ModelKind::PureBrown`]: rigid dipoles rotating in the carrier fluid.
//! * [`ModelKind::BlockedBrownNeel`]: moment dynamics with the particle body frozen.
//! * [`ModelKind::CoupledBrownNeel`]: moment and body rotation coupled through the
//!   anisotropy energy `−K·Vc·(m·n)²`.
//!
//! Two integrators realize the Néel channel:
//!
//! * [`Integrator::WellHopping`] (default) keeps the moment at its thermal average
//!   inside the occupied anisotropy well and samples well switching with exact
//!   two-state kinetics over each step. The easy axis follows overdamped
//!   Brownian rotation driven by the well-averaged field torque. The step size is
//!   set by the drive period and the Brownian time only, so full drive periods at
//!   kHz frequencies are affordable.
//! * [`Integrator::ResolvedLlg`] integrates the stochastic Landau–Lifshitz–Gilbert
//!   equation directly. Its step must resolve Larmor precession (sub-ns), which
//!   limits it to short windows.
//!
//! Both integrators share the same joint Boltzmann distribution, so in a static
//! field the coupled ensemble relaxes to the Langevin curve.

mod engine;
mod wells;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Condition, ParticleParams, SimConstants, TimeSignal, DEFAULT_SAMPLE_RATE};
use engine::{AxisInit, FieldProfile, Plan, ResolvedLlg, RigidRotor, WellHopping};
use wells::WellTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    LangevinEquilibrium,
    PureBrown,
    BlockedBrownNeel,
    CoupledBrownNeel,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] =
        [Self::LangevinEquilibrium, Self::PureBrown, Self::BlockedBrownNeel, Self::CoupledBrownNeel];

    fn rotates(self) -> bool {
        matches!(self, Self::PureBrown | Self::CoupledBrownNeel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Integrator {
    #[default]
    WellHopping,
    ResolvedLlg,
}

/// Initial easy-axis orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum EasyAxisInit {
    /// Random isotropic axes (zero mean magnetization).
    #[default]
    Isotropic,
    /// All axes along the drive direction (the aligned Néel variant).
    AlongDrive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    pub ensemble_size: usize,
    /// Upper bound on the integrator step (s); `None` picks one automatically.
    /// The step actually used splits the simulated span evenly and never exceeds it.
    pub dt: Option<f64>,
    pub seed: u64,
    pub periods_total: u32,
    pub periods_discarded: u32,
    /// Output sample rate (S/s).
    pub fs: f64,
    pub integrator: Integrator,
    pub easy_axis: EasyAxisInit,
    /// Langevin noise on moment and body rotation. Well populations remain thermal.
    pub thermal: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            ensemble_size: 1000,
            dt: None,
            seed: 0,
            periods_total: 3,
            periods_discarded: 2,
            fs: DEFAULT_SAMPLE_RATE,
            integrator: Integrator::WellHopping,
            easy_axis: EasyAxisInit::Isotropic,
            thermal: true,
        }
    }
}

impl SimOptions {
    /// Settings used for validation runs (10⁴ particles).
    pub fn validation() -> Self {
        Self { ensemble_size: 10_000, ..Self::default() }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size == 0 {
            return Err(Error::InvalidOptions("ensemble_size must be at least 1".into()));
        }
        if self.periods_total <= self.periods_discarded {
            return Err(Error::InvalidOptions("periods_total must exceed periods_discarded".into()));
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::InvalidOptions("sample rate must be positive".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::InvalidOptions("dt must be positive".into()));
            }
        }
        Ok(())
    }

    fn axis_init(&self) -> AxisInit {
        match self.easy_axis {
            EasyAxisInit::Isotropic => AxisInit::Isotropic,
            EasyAxisInit::AlongDrive => AxisInit::AlongZ,
        }
    }
}

/// Langevin function `coth(ξ) − 1/ξ`, with `L(0) = 0`.
pub fn langevin(xi: f64) -> f64 {
    if xi.abs() < 1e-4 {
        xi / 3.0 - xi.powi(3) / 45.0
    } else {
        1.0 / xi.tanh() - 1.0 / xi
    }
}

/// Reduced field ξ per tesla of applied μ0·H: `Ms·Vc/(kB·T)`.
pub fn xi_per_tesla(p: &ParticleParams, c: &SimConstants) -> f64 {
    c.ms * p.core_volume() / c.kt()
}

/// Reduced anisotropy barrier σ = K·Vc/(kB·T).
pub fn reduced_barrier(p: &ParticleParams, c: &SimConstants) -> f64 {
    p.anisotropy_si() * p.core_volume() / c.kt()
}

/// Brownian relaxation time `3·η·Vh/(kB·T)`; `eta` in mPa·s.
pub fn tau_brown(eta: f64, p: &ParticleParams, c: &SimConstants) -> f64 {
    3.0 * eta * 1e-3 * p.hydro_volume() / c.kt()
}

/// Arrhenius Néel time `τ0·exp(K·Vc/(kB·T))` with the attempt time from `c.tau0`.
pub fn tau_neel(p: &ParticleParams, c: &SimConstants) -> f64 {
    c.tau0 * reduced_barrier(p, c).exp()
}

/// Free rotational diffusion time of the moment, `Ms·Vc·(1+α²)/(2·α·γ·kB·T)`.
pub fn tau_free_diffusion(p: &ParticleParams, c: &SimConstants) -> f64 {
    c.ms * p.core_volume() * (1.0 + c.alpha * c.alpha) / (2.0 * c.alpha * c.gamma * c.kt())
}

/// Zero-field Néel relaxation time derived from the LLG parameters, interpolating
/// between free diffusion (σ → 0) and the high-barrier asymptote
/// `τ_D·(√π/2)·σ^{-3/2}·e^σ`.
pub fn tau_neel_llg(p: &ParticleParams, c: &SimConstants) -> f64 {
    let tau_d = tau_free_diffusion(p, c);
    let sigma = reduced_barrier(p, c);
    if sigma < 1e-9 {
        return tau_d;
    }
    let bracket = (sigma / std::f64::consts::PI).sqrt() / (1.0 + 1.0 / sigma) + 0.5f64.powf(sigma + 1.0);
    tau_d * sigma.exp_m1() / (2.0 * sigma) / bracket
}

/// Magnetization `Ms·L(ξ(t))` over one drive period.
pub fn langevin_magnetization(p: &ParticleParams, c: &SimConstants, drive: &crate::types::DriveField, fs: f64) -> Result<TimeSignal> {
    let n = drive.samples_per_period(fs);
    let xpt = xi_per_tesla(p, c);
    let samples = (0..n).map(|i| c.ms * langevin(xpt * drive.field_at(i as f64 / fs))).collect();
    TimeSignal::new(samples, fs, drive.freq)
}

fn step_bound(model: ModelKind, p: &ParticleParams, c: &SimConstants, cond: &Condition, opt: &SimOptions) -> f64 {
    let mut bound = cond.drive.period() / 100.0;
    if model.rotates() {
        bound = bound.min(tau_brown(cond.eta, p, c) / 10.0);
    }
    if opt.integrator == Integrator::ResolvedLlg && model != ModelKind::PureBrown {
        bound = bound.min(tau_neel(p, c) / 10.0);
        let b_max = cond.drive.amplitude_tesla() + 2.0 * p.anisotropy_si() / c.ms;
        let gamma_ll = c.gamma / (1.0 + c.alpha * c.alpha);
        bound = bound.min(0.1 / (gamma_ll * b_max));
    }
    bound
}

fn auto_step(model: ModelKind, p: &ParticleParams, c: &SimConstants, cond: &Condition, opt: &SimOptions) -> f64 {
    let bound = step_bound(model, p, c, cond, opt);
    if opt.integrator == Integrator::ResolvedLlg {
        return 0.5 * bound;
    }
    let mut dt = bound.min(cond.drive.period() / 400.0);
    if model.rotates() {
        let xi_max = xi_per_tesla(p, c) * cond.drive.amplitude_tesla();
        dt = dt.min(tau_brown(cond.eta, p, c) / (5.0 * xi_max.max(1.0)));
    }
    dt
}

/// Ensemble-mean magnetization along the drive axis (A/m) over the last period.
///
/// Runs `periods_total` drive periods from an isotropic zero-mean ensemble,
/// discards the first `periods_discarded`, and samples the remaining one at `opt.fs`.
/// Output is bitwise reproducible for a fixed seed, independent of the thread count.
pub fn simulate(
    model: ModelKind,
    p: &ParticleParams,
    c: &SimConstants,
    cond: &Condition,
    opt: &SimOptions,
) -> Result<TimeSignal> {
    opt.validate()?;
    c.validate()?;
    if model == ModelKind::LangevinEquilibrium {
        return langevin_magnetization(p, c, &cond.drive, opt.fs);
    }
    let bound = step_bound(model, p, c, cond, opt);
    let target = match opt.dt {
        Some(dt) if dt > bound => return Err(Error::StepSize { dt, bound }),
        Some(dt) => dt,
        None => auto_step(model, p, c, cond, opt),
    };
    let n = cond.drive.samples_per_period(opt.fs);
    if n < 2 {
        return Err(Error::InvalidOptions("sample rate too low for one drive period".into()));
    }
    let period = cond.drive.period();
    let total = opt.periods_total as f64 * period;
    let steps = (total / target).ceil() as usize;
    let plan = Plan {
        dt: total / steps as f64,
        steps,
        record_start: opt.periods_discarded as f64 * period,
        record_dt: 1.0 / opt.fs,
        records: n,
    };
    let field = FieldProfile::Sine {
        peak: cond.drive.amplitude_tesla(),
        omega: std::f64::consts::TAU * cond.drive.freq,
    };
    let out = run_model(model, p, c, cond.eta, field, &plan, opt)?;
    let scale = c.ms / opt.ensemble_size as f64;
    TimeSignal::new(out.sums.into_iter().map(|s| s * scale).collect(), opt.fs, cond.drive.freq)
}

fn run_model(
    model: ModelKind,
    p: &ParticleParams,
    c: &SimConstants,
    eta: f64,
    field: FieldProfile,
    plan: &Plan,
    opt: &SimOptions,
) -> Result<engine::EnsembleOutput> {
    let xpt = xi_per_tesla(p, c);
    let d_rot = c.kt() / (6.0 * eta * 1e-3 * p.hydro_volume());
    let n = opt.ensemble_size;
    Ok(match (model, opt.integrator) {
        (ModelKind::LangevinEquilibrium, _) => unreachable!("closed form"),
        (ModelKind::PureBrown, _) => {
            let k = RigidRotor { field, xi_per_tesla: xpt, d_rot, thermal: opt.thermal };
            engine::run_ensemble(&k, plan, opt.seed, n)
        }
        (_, Integrator::WellHopping) => {
            let sigma = reduced_barrier(p, c);
            let table = WellTable::new(sigma, xpt * field.peak());
            let k = WellHopping {
                field,
                table: &table,
                sigma,
                xi_per_tesla: xpt,
                d_rot: model.rotates().then_some(d_rot),
                thermal: opt.thermal,
                tau_neel: tau_neel_llg(p, c),
                tau_free: tau_free_diffusion(p, c),
                axis_init: opt.axis_init(),
            };
            engine::run_ensemble(&k, plan, opt.seed, n)
        }
        (_, Integrator::ResolvedLlg) => {
            let k = resolved_kernel(model, p, c, eta, field, opt);
            engine::run_ensemble(&k, plan, opt.seed, n)
        }
    })
}

fn resolved_kernel(model: ModelKind, p: &ParticleParams, c: &SimConstants, eta: f64, field: FieldProfile, opt: &SimOptions) -> ResolvedLlg {
    let vc = p.core_volume();
    let zeta = 6.0 * eta * 1e-3 * p.hydro_volume();
    ResolvedLlg {
        field,
        gamma_ll: c.gamma / (1.0 + c.alpha * c.alpha),
        alpha: c.alpha,
        b_aniso: 2.0 * p.anisotropy_si() / c.ms,
        d_field: c.alpha * c.kt() / (c.gamma * c.ms * vc),
        torque_rate: model.rotates().then_some(2.0 * p.anisotropy_si() * vc / zeta),
        d_rot: c.kt() / zeta,
        thermal: opt.thermal,
        axis_init: opt.axis_init(),
    }
}

/// Time-averaged response to a static field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticResponse {
    /// Mean reduced magnetization ⟨m_z⟩ over particles and the averaging window.
    pub mean: f64,
    /// Standard error of `mean` from the spread of per-particle time averages.
    pub std_error: f64,
    /// Reduced field ξ of the applied field.
    pub xi: f64,
}

/// Relax an isotropic ensemble in a static field `field_mt` (mT) for `settle`
/// seconds, then average `m_z` over the next `average` seconds.
pub fn relax_static(
    model: ModelKind,
    p: &ParticleParams,
    c: &SimConstants,
    eta: f64,
    field_mt: f64,
    settle: f64,
    average: f64,
    opt: &SimOptions,
) -> Result<StaticResponse> {
    opt.validate()?;
    let xi = xi_per_tesla(p, c) * field_mt * 1e-3;
    if model == ModelKind::LangevinEquilibrium {
        return Ok(StaticResponse { mean: langevin(xi), std_error: 0.0, xi });
    }
    let total = settle + average;
    let dt = match opt.dt {
        Some(dt) => dt,
        None => {
            let mut dt = total / 2000.0;
            if model.rotates() {
                dt = dt.min(tau_brown(eta, p, c) / (10.0 * xi.abs().max(1.0)));
            }
            dt
        }
    };
    let steps = (total / dt).ceil() as usize;
    let dt = total / steps as f64;
    let skip = ((settle / dt).ceil() as usize).max(1);
    let plan = Plan { dt, steps, record_start: skip as f64 * dt, record_dt: dt, records: steps + 1 - skip };
    let out = run_model(model, p, c, eta, FieldProfile::Static(field_mt * 1e-3), &plan, opt)?;
    let n = out.particle_means.len() as f64;
    let mean = out.particle_means.iter().sum::<f64>() / n;
    let var = out.particle_means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(StaticResponse { mean, std_error: (var / n).sqrt(), xi })
}

/// Induced particle signal `Vc·dM/dt`, differentiated spectrally over the periodic window.
pub fn mnp_signal(mag: &TimeSignal, p: &ParticleParams) -> Result<TimeSignal> {
    use num_complex::Complex64;
    let n = mag.len();
    let mut buf: Vec<Complex64> = mag.samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let w0 = std::f64::consts::TAU * mag.fd;
    for (k, v) in buf.iter_mut().enumerate() {
        let harmonic = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        *v = if 2 * k == n { Complex64::new(0.0, 0.0) } else { *v * Complex64::new(0.0, w0 * harmonic) };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = p.core_volume() / n as f64;
    TimeSignal::new(buf.iter().map(|v| v.re * scale).collect(), mag.fs, mag.fd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::harmonic_coefficient;
    use crate::types::DriveField;
    use engine::Kernel;

    fn fig1() -> ParticleParams {
        ParticleParams::new(20.0, 40.0, 6.0).unwrap()
    }

    fn cond(freq: f64, eta: f64) -> Condition {
        Condition::new(DriveField::new(freq, 10.0).unwrap(), eta).unwrap()
    }

    #[test]
    fn langevin_values() {
        assert_eq!(langevin(0.0), 0.0);
        assert!((langevin(500.0) - 0.998).abs() < 1e-12);
        // coth(1) − 1 = 0.31303528549933130
        assert!((langevin(1.0) - 0.313_035_285_499_331_3).abs() < 1e-12);
        assert!((langevin(-2.0) + langevin(2.0)).abs() < 1e-15);
    }

    #[test]
    fn relaxation_times() {
        let c = SimConstants::default();
        let p = fig1();
        let tb = tau_brown(0.89, &p, &c);
        assert!((tb - 7.33e-5).abs() < 0.05e-5, "tau_B = {tb}");
        assert!((tau_brown(1.78, &p, &c) / tb - 2.0).abs() < 1e-12);
        let free = ParticleParams::new(20.0, 40.0, 0.0).unwrap();
        assert_eq!(tau_neel(&free, &c), c.tau0);
        assert_eq!(tau_neel_llg(&free, &c), tau_free_diffusion(&free, &c));
        // high-barrier asymptote
        let big = ParticleParams::new(30.0, 40.0, 10.0).unwrap();
        let sigma = reduced_barrier(&big, &c);
        let asym = tau_free_diffusion(&big, &c) * std::f64::consts::PI.sqrt() / 2.0 * sigma.powf(-1.5) * sigma.exp();
        assert!((tau_neel_llg(&big, &c) / asym - 1.0).abs() < 0.05);
    }

    #[test]
    fn invalid_options() {
        let c = SimConstants::default();
        let opt = SimOptions { ensemble_size: 0, ..SimOptions::default() };
        let err = simulate(ModelKind::CoupledBrownNeel, &fig1(), &c, &cond(1000.0, 0.89), &opt).unwrap_err();
        assert!(matches!(err, Error::InvalidOptions(_)));
        let opt = SimOptions { dt: Some(1e-3), ..SimOptions::default() };
        let err = simulate(ModelKind::CoupledBrownNeel, &fig1(), &c, &cond(1000.0, 0.89), &opt).unwrap_err();
        assert!(matches!(err, Error::StepSize { .. }));
    }

    #[test]
    fn langevin_model_ignores_viscosity_and_anisotropy() {
        let c = SimConstants::default();
        let opt = SimOptions::default();
        let a = simulate(ModelKind::LangevinEquilibrium, &fig1(), &c, &cond(1000.0, 0.89), &opt).unwrap();
        let b = simulate(ModelKind::LangevinEquilibrium, &fig1(), &c, &cond(1000.0, 15.33), &opt).unwrap();
        let k = simulate(ModelKind::LangevinEquilibrium, &ParticleParams::new(20.0, 40.0, 2.0).unwrap(), &c, &cond(1000.0, 0.89), &opt).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, k);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let c = SimConstants::default();
        let opt = SimOptions { ensemble_size: 100, ..SimOptions::default() }.with_seed(7);
        let a = simulate(ModelKind::CoupledBrownNeel, &fig1(), &c, &cond(2000.0, 0.89), &opt).unwrap();
        let b = simulate(ModelKind::CoupledBrownNeel, &fig1(), &c, &cond(2000.0, 0.89), &opt).unwrap();
        assert_eq!(a.samples, b.samples);
        let other = simulate(ModelKind::CoupledBrownNeel, &fig1(), &c, &cond(2000.0, 0.89), &opt.with_seed(8)).unwrap();
        assert_ne!(a.samples, other.samples);
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let c = SimConstants::default();
        let opt = SimOptions { ensemble_size: 200, ..SimOptions::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                simulate(ModelKind::CoupledBrownNeel, &fig1(), &c, &cond(2000.0, 3.32), &opt).unwrap()
            })
        };
        assert_eq!(run(1).samples, run(3).samples);
    }

    #[test]
    fn unit_norms_hold_every_step() {
        let c = SimConstants::default();
        let p = fig1();
        let field = FieldProfile::Sine { peak: 0.01, omega: std::f64::consts::TAU * 1e3 };
        let opt = SimOptions::default();
        let llg = resolved_kernel(ModelKind::CoupledBrownNeel, &p, &c, 0.89, field, &opt);
        assert!(engine::max_unit_error(&llg, 1e-12, 5000, 3) < 1e-9);
        let rotor = RigidRotor { field, xi_per_tesla: xi_per_tesla(&p, &c), d_rot: 1e4, thermal: true };
        assert!(engine::max_unit_error(&rotor, 1e-7, 5000, 3) < 1e-9);
        let table = WellTable::with_resolution(reduced_barrier(&p, &c), 4.0, 9, 33);
        let hop = WellHopping {
            field,
            table: &table,
            sigma: reduced_barrier(&p, &c),
            xi_per_tesla: xi_per_tesla(&p, &c),
            d_rot: Some(1e4),
            thermal: true,
            tau_neel: tau_neel_llg(&p, &c),
            tau_free: tau_free_diffusion(&p, &c),
            axis_init: AxisInit::Isotropic,
        };
        assert!(engine::max_unit_error(&hop, 1e-7, 5000, 3) < 1e-9);
    }

    #[test]
    fn zero_noise_moment_aligns_with_static_field() {
        // K = 0 isolates LLG relaxation toward the field.
        let c = SimConstants::default();
        let p = ParticleParams::new(20.0, 40.0, 0.0).unwrap();
        let b = 0.01;
        let gamma_ll = c.gamma / (1.0 + c.alpha * c.alpha);
        let tau = 1.0 / (c.alpha * gamma_ll * b);
        let opt = SimOptions { thermal: false, ensemble_size: 16, dt: Some(1e-12), integrator: Integrator::ResolvedLlg, ..SimOptions::default() };
        let k = resolved_kernel(ModelKind::BlockedBrownNeel, &p, &c, 0.89, FieldProfile::Static(b), &opt);
        for particle in 0..opt.ensemble_size {
            let mut rng = engine::particle_rng(1, particle);
            let mut s = k.init(&mut rng);
            if s.m.z < -0.99 {
                continue; // unstable fixed point
            }
            // tan(θ/2) decays as e^{-t/τ}; 12τ covers starts up to ~172°
            let steps = (12.0 * tau / 1e-12) as usize;
            for i in 0..steps {
                k.step(&mut s, i as f64 * 1e-12, 1e-12, &mut rng);
            }
            let angle = s.m.z.clamp(-1.0, 1.0).acos();
            assert!(angle <= 1e-3, "residual angle {angle}");
        }
    }

    #[test]
    fn zero_noise_rigid_dipole_aligns() {
        let c = SimConstants::default();
        let p = fig1();
        let opt = SimOptions { thermal: false, ensemble_size: 32, ..SimOptions::default() };
        // deterministic Brown alignment time ζ/(Ms·Vc·B)
        let r = relax_static(ModelKind::PureBrown, &p, &c, 0.89, 10.0, 10.0 * 2.0 * tau_brown(0.89, &p, &c) / 3.66, 1e-6, &opt).unwrap();
        assert!(r.mean > (1e-3f64).cos() - 1e-12, "mean cos = {}", r.mean);
    }

    #[test]
    fn resolved_free_moment_reaches_langevin() {
        let c = SimConstants::default();
        let p = ParticleParams::new(8.0, 20.0, 0.0).unwrap();
        let field_mt = 2.0 / (xi_per_tesla(&p, &c) * 1e-3);
        let tau = tau_free_diffusion(&p, &c);
        let opt = SimOptions { ensemble_size: 2000, dt: Some(2e-12), integrator: Integrator::ResolvedLlg, seed: 5, ..SimOptions::default() };
        let r = relax_static(ModelKind::BlockedBrownNeel, &p, &c, 0.89, field_mt, 5.0 * tau, 10.0 * tau, &opt).unwrap();
        let expect = langevin(r.xi);
        assert!((r.mean - expect).abs() < 4.0 * r.std_error + 2e-3, "{} vs {expect} (se {})", r.mean, r.std_error);
    }

    #[test]
    fn signal_of_constant_is_zero() {
        let m = TimeSignal::new(vec![3.0; 2000], 2e6, 1000.0).unwrap();
        let s = mnp_signal(&m, &fig1()).unwrap();
        assert!(s.samples.iter().all(|v| v.abs() < 1e-30));
    }

    #[test]
    fn signal_of_tone_is_scaled_derivative() {
        let (fs, fd, n) = (2e6, 1000.0, 2000);
        let w = std::f64::consts::TAU * 3.0 * fd;
        let m = TimeSignal::new((0..n).map(|i| (w * i as f64 / fs).sin()).collect(), fs, fd).unwrap();
        let p = fig1();
        let s = mnp_signal(&m, &p).unwrap();
        for (i, v) in s.samples.iter().enumerate() {
            let expect = p.core_volume() * w * (w * i as f64 / fs).cos();
            assert!((v - expect).abs() < 1e-9 * p.core_volume() * w);
        }
        let double = ParticleParams::new(40.0, 40.0, 6.0).unwrap();
        let s2 = mnp_signal(&m, &double).unwrap();
        let ratio = harmonic_coefficient(&s2.samples, 3).norm() / harmonic_coefficient(&s.samples, 3).norm();
        assert!((ratio - 8.0).abs() < 1e-9);
    }
}
