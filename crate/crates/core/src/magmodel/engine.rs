//! Per-particle stochastic integrators and the deterministic ensemble reduction.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;

use super::wells::WellTable;

/// Particles per reduction chunk; fixed so the summation order never depends on the thread count.
const CHUNK: usize = 64;

pub(crate) type Vec3 = Vector3<f64>;

pub(crate) fn z_axis() -> Vec3 {
    Vec3::new(0.0, 0.0, 1.0)
}

/// Field along z, in tesla.
#[derive(Debug, Clone, Copy)]
pub(crate) enum FieldProfile {
    Sine { peak: f64, omega: f64 },
    Static(f64),
}

impl FieldProfile {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            FieldProfile::Sine { peak, omega } => peak * (omega * t).sin(),
            FieldProfile::Static(b) => b,
        }
    }

    pub fn peak(&self) -> f64 {
        match *self {
            FieldProfile::Sine { peak, .. } => peak.abs(),
            FieldProfile::Static(b) => b.abs(),
        }
    }
}

/// Time stepping and recording schedule.
///
/// Records are taken at `record_start + r·record_dt`, each from the integrator
/// state nearest in time, so the output grid need not divide the step.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Plan {
    pub dt: f64,
    pub steps: usize,
    pub record_start: f64,
    pub record_dt: f64,
    pub records: usize,
}

pub(crate) struct EnsembleOutput {
    /// Sum over particles of the observable at each record.
    pub sums: Vec<f64>,
    /// Per-particle time average of the observable over the records.
    pub particle_means: Vec<f64>,
}

pub(crate) trait Kernel: Sync {
    type State;
    fn init(&self, rng: &mut ChaCha8Rng) -> Self::State;
    fn step(&self, state: &mut Self::State, t: f64, dt: f64, rng: &mut ChaCha8Rng);
    /// Moment projection on z at time `t`.
    fn observe(&self, state: &Self::State, t: f64) -> f64;
    /// Post-step norm check hook for tests.
    fn unit_error(&self, _state: &Self::State) -> f64 {
        0.0
    }
}

pub(crate) fn particle_rng(seed: u64, particle: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(particle as u64);
    rng
}

fn run_particle<K: Kernel>(kernel: &K, plan: &Plan, seed: u64, index: usize, sums: &mut [f64]) -> f64 {
    let mut rng = particle_rng(seed, index);
    let mut state = kernel.init(&mut rng);
    let mut acc = 0.0;
    let mut next = 0;
    let mut flush = |state: &K::State, until: f64, next: &mut usize| {
        while *next < plan.records {
            let tr = plan.record_start + *next as f64 * plan.record_dt;
            if tr > until {
                break;
            }
            let v = kernel.observe(state, tr);
            sums[*next] += v;
            acc += v;
            *next += 1;
        }
    };
    let half = 0.5 * plan.dt;
    for step in 0..plan.steps {
        let t = step as f64 * plan.dt;
        flush(&state, t + half - 1e-9 * plan.dt, &mut next);
        kernel.step(&mut state, t, plan.dt, &mut rng);
        debug_assert!(kernel.unit_error(&state) < 1e-9);
    }
    flush(&state, f64::INFINITY, &mut next);
    acc / plan.records.max(1) as f64
}

pub(crate) fn run_ensemble<K: Kernel>(kernel: &K, plan: &Plan, seed: u64, particles: usize) -> EnsembleOutput {
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..particles.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut sums = vec![0.0; plan.records];
            let means = (c * CHUNK..((c + 1) * CHUNK).min(particles))
                .map(|i| run_particle(kernel, plan, seed, i, &mut sums))
                .collect();
            (sums, means)
        })
        .collect();
    let mut sums = vec![0.0; plan.records];
    let mut particle_means = Vec::with_capacity(particles);
    for (s, m) in chunks {
        for (a, b) in sums.iter_mut().zip(s) {
            *a += b;
        }
        particle_means.extend(m);
    }
    EnsembleOutput { sums, particle_means }
}

fn normal3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Uniformly distributed unit vector.
pub(crate) fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = normal3(rng);
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Easy-axis initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum AxisInit {
    Isotropic,
    AlongZ,
}

fn init_axis(init: AxisInit, rng: &mut ChaCha8Rng) -> Vec3 {
    match init {
        AxisInit::Isotropic => random_unit(rng),
        AxisInit::AlongZ => z_axis(),
    }
}

/// Stratonovich Heun step for overdamped rotation of a unit vector:
/// `dn = drift(n, t)·dt + √(2D)·dW × n`.
fn heun_rotation(
    n: &Vec3,
    t: f64,
    dt: f64,
    noise: Option<(f64, Vec3)>,
    drift: impl Fn(&Vec3, f64) -> Vec3,
) -> Vec3 {
    let f0 = drift(n, t);
    let g0 = noise.map(|(amp, dw)| dw.cross(n) * amp).unwrap_or_else(Vec3::zeros);
    let pred = (n + f0 * dt + g0).normalize();
    let f1 = drift(&pred, t + dt);
    let g1 = noise.map(|(amp, dw)| dw.cross(&pred) * amp).unwrap_or_else(Vec3::zeros);
    (n + (f0 + f1) * (0.5 * dt) + (g0 + g1) * 0.5).normalize()
}

/// Rigid dipole (m ≡ n) rotating in a viscous medium.
pub(crate) struct RigidRotor {
    pub field: FieldProfile,
    /// Ms·Vc/(kB·T), converts tesla to reduced field ξ.
    pub xi_per_tesla: f64,
    /// Rotational diffusion coefficient kB·T/(6ηVh) (1/s).
    pub d_rot: f64,
    pub thermal: bool,
}

impl Kernel for RigidRotor {
    type State = Vec3;

    fn init(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        random_unit(rng)
    }

    fn step(&self, n: &mut Vec3, t: f64, dt: f64, rng: &mut ChaCha8Rng) {
        let noise = self.thermal.then(|| ((2.0 * self.d_rot).sqrt(), normal3(rng) * dt.sqrt()));
        let z = z_axis();
        *n = heun_rotation(n, t, dt, noise, |v, tt| {
            let xi = self.xi_per_tesla * self.field.at(tt);
            v.cross(&z).cross(v) * (self.d_rot * xi)
        });
    }

    fn observe(&self, n: &Vec3, _t: f64) -> f64 {
        n.z
    }

    fn unit_error(&self, n: &Vec3) -> f64 {
        (n.norm() - 1.0).abs()
    }
}

/// Moment in thermal equilibrium inside one of the two anisotropy wells,
/// with Néel switching between wells and optional Brownian rotation of the
/// easy axis.
pub(crate) struct WellHopping<'a> {
    pub field: FieldProfile,
    pub table: &'a WellTable,
    pub sigma: f64,
    pub xi_per_tesla: f64,
    /// Rotational diffusion coefficient; `None` freezes the easy axis.
    pub d_rot: Option<f64>,
    pub thermal: bool,
    /// Zero-field Néel relaxation time (s).
    pub tau_neel: f64,
    /// Free-diffusion time of the moment (s).
    pub tau_free: f64,
    pub axis_init: AxisInit,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct HopState {
    pub n: Vec3,
    /// +1 when the moment sits in the well around +n.
    pub well: f64,
}

/// Both wells evaluated at one configuration.
struct WellEval {
    /// Mean moment in the occupied well.
    mean: Vec3,
    /// ln Z(occupied) − ln Z(other)
    ln_ratio: f64,
    /// |n·z'|, with z' the field direction
    u_abs: f64,
    xi_abs: f64,
}

impl WellHopping<'_> {
    fn eval(&self, n: &Vec3, well: f64, xi: f64) -> WellEval {
        let zdir = if xi < 0.0 { -z_axis() } else { z_axis() };
        let u = n.dot(&zdir).clamp(-1.0, 1.0);
        let psi = u.acos();
        let xi_abs = xi.abs();
        let plus = self.table.lookup(xi_abs, psi);
        let minus = self.table.lookup(xi_abs, std::f64::consts::PI - psi);
        let perp = zdir - n * u;
        let perp_norm = perp.norm();
        let e_perp = if perp_norm > 1e-12 { perp / perp_norm } else { Vec3::zeros() };
        let (mean, ln_ratio) = if well > 0.0 {
            (n * plus.a + e_perp * plus.b, plus.ln_z - minus.ln_z)
        } else {
            (-n * minus.a + e_perp * minus.b, minus.ln_z - plus.ln_z)
        };
        WellEval { mean, ln_ratio, u_abs: u.abs(), xi_abs }
    }

    /// Total switching rate Γ = k₊₋ + k₋₊ with the barrier lowered by the
    /// field component along the easy axis.
    fn switching_rate(&self, xi_abs: f64, u_abs: f64) -> f64 {
        if self.sigma < 1e-9 {
            return 1.0 / self.tau_free;
        }
        let h = xi_abs * u_abs / (2.0 * self.sigma);
        let raised = self.sigma - self.sigma * (1.0 + h).powi(2);
        let lowered = self.sigma - self.sigma * (1.0 - h).max(0.0).powi(2);
        let rate = (raised.exp() + lowered.exp()) / (2.0 * self.tau_neel);
        // barrier-free limit
        rate.min((1.0 + self.sigma) / self.tau_free)
    }
}

impl Kernel for WellHopping<'_> {
    type State = HopState;

    fn init(&self, rng: &mut ChaCha8Rng) -> HopState {
        let n = init_axis(self.axis_init, rng);
        let well = if rng.random::<bool>() { 1.0 } else { -1.0 };
        HopState { n, well }
    }

    fn step(&self, s: &mut HopState, t: f64, dt: f64, rng: &mut ChaCha8Rng) {
        if let Some(d_rot) = self.d_rot {
            let noise = self.thermal.then(|| ((2.0 * d_rot).sqrt(), normal3(rng) * dt.sqrt()));
            let well = s.well;
            s.n = heun_rotation(&s.n, t, dt, noise, |v, tt| {
                let xi = self.xi_per_tesla * self.field.at(tt);
                let m = self.eval(v, well, xi).mean;
                m.cross(&z_axis()).cross(v) * (d_rot * xi)
            });
        }
        let xi = self.xi_per_tesla * self.field.at(t + dt);
        let e = self.eval(&s.n, s.well, xi);
        let p_other = 1.0 / (1.0 + e.ln_ratio.exp());
        let gamma = self.switching_rate(e.xi_abs, e.u_abs);
        let p_flip = p_other * (-(-gamma * dt).exp_m1());
        if rng.sample(Uniform::new(0.0, 1.0).expect("valid range")) < p_flip {
            s.well = -s.well;
        }
    }

    fn observe(&self, s: &HopState, t: f64) -> f64 {
        let xi = self.xi_per_tesla * self.field.at(t);
        // z-projection of a·(±n) + b·e⊥, with e⊥·z = sin ψ
        let u = if xi < 0.0 { -s.n.z } else { s.n.z }.clamp(-1.0, 1.0);
        let psi = if s.well > 0.0 { u.acos() } else { std::f64::consts::PI - u.acos() };
        let w = self.table.lookup(xi.abs(), psi);
        let along = w.a * u * s.well + w.b * (1.0 - u * u).sqrt();
        if xi < 0.0 { -along } else { along }
    }

    fn unit_error(&self, s: &HopState) -> f64 {
        (s.n.norm() - 1.0).abs()
    }
}

/// Fully resolved coupled dynamics: stochastic Landau–Lifshitz–Gilbert for the
/// moment and overdamped Brownian rotation of the easy axis.
pub(crate) struct ResolvedLlg {
    pub field: FieldProfile,
    /// γ/(1+α²)
    pub gamma_ll: f64,
    pub alpha: f64,
    /// Anisotropy field 2K/Ms (T).
    pub b_aniso: f64,
    /// Thermal field intensity α·kB·T/(γ·Ms·Vc) (T²·s).
    pub d_field: f64,
    /// 2·K·Vc / (6ηVh): anisotropy torque over friction (1/s); `None` freezes the axis.
    pub torque_rate: Option<f64>,
    pub d_rot: f64,
    pub thermal: bool,
    pub axis_init: AxisInit,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LlgState {
    pub m: Vec3,
    pub n: Vec3,
}

impl ResolvedLlg {
    fn llg_rate(&self, m: &Vec3, b: &Vec3) -> Vec3 {
        let mxb = m.cross(b);
        (mxb + m.cross(&mxb) * self.alpha) * (-self.gamma_ll)
    }

    fn effective_field(&self, m: &Vec3, n: &Vec3, t: f64) -> Vec3 {
        z_axis() * self.field.at(t) + n * (self.b_aniso * m.dot(n))
    }

    fn axis_rate(&self, m: &Vec3, n: &Vec3) -> Vec3 {
        match self.torque_rate {
            // torque ∝ (m·n)(n × m); dn/dt = torque × n / ζ
            Some(rate) => n.cross(m).cross(n) * (rate * m.dot(n)),
            None => Vec3::zeros(),
        }
    }
}

impl Kernel for ResolvedLlg {
    type State = LlgState;

    fn init(&self, rng: &mut ChaCha8Rng) -> LlgState {
        let n = init_axis(self.axis_init, rng);
        LlgState { m: random_unit(rng), n }
    }

    fn step(&self, s: &mut LlgState, t: f64, dt: f64, rng: &mut ChaCha8Rng) {
        let (bw, nw) = if self.thermal {
            (normal3(rng) * ((2.0 * self.d_field * dt).sqrt()), normal3(rng) * ((2.0 * self.d_rot * dt).sqrt()))
        } else {
            (Vec3::zeros(), Vec3::zeros())
        };
        let rotate = self.torque_rate.is_some();
        let nw = if rotate { nw } else { Vec3::zeros() };

        let fm0 = self.llg_rate(&s.m, &self.effective_field(&s.m, &s.n, t));
        let gm0 = self.llg_rate(&s.m, &bw);
        let fn0 = self.axis_rate(&s.m, &s.n);
        let gn0 = nw.cross(&s.n);
        let mp = (s.m + fm0 * dt + gm0).normalize();
        let np = (s.n + fn0 * dt + gn0).normalize();

        let fm1 = self.llg_rate(&mp, &self.effective_field(&mp, &np, t + dt));
        let gm1 = self.llg_rate(&mp, &bw);
        let fn1 = self.axis_rate(&mp, &np);
        let gn1 = nw.cross(&np);
        s.m = (s.m + (fm0 + fm1) * (0.5 * dt) + (gm0 + gm1) * 0.5).normalize();
        s.n = (s.n + (fn0 + fn1) * (0.5 * dt) + (gn0 + gn1) * 0.5).normalize();
    }

    fn observe(&self, s: &LlgState, _t: f64) -> f64 {
        s.m.z
    }

    fn unit_error(&self, s: &LlgState) -> f64 {
        (s.m.norm() - 1.0).abs().max((s.n.norm() - 1.0).abs())
    }
}

/// Step a single particle and report the worst unit-norm violation (test hook).
#[cfg(test)]
pub(crate) fn max_unit_error<K: Kernel>(kernel: &K, dt: f64, steps: usize, seed: u64) -> f64 {
    let mut rng = particle_rng(seed, 0);
    let mut state = kernel.init(&mut rng);
    let mut worst: f64 = 0.0;
    for i in 0..steps {
        kernel.step(&mut state, i as f64 * dt, dt, &mut rng);
        worst = worst.max(kernel.unit_error(&state));
    }
    worst
}
