//! Thermal averages of the moment inside one anisotropy well.
//!
//! For a particle with easy axis `n` in a field along `z`, the moment density is
//! `exp(ξ·m·z + σ·(m·n)²)`. Integrating over the hemisphere `m·n > 0` gives the
//! well partition function `Z₊` and the conditional mean moment
//! `⟨m⟩₊ = a·n + b·e⊥`, where `e⊥` is the unit vector along `z − (n·z)·n`.
//! The other well follows from `n → −n`.
//!
//! The azimuthal integral is done analytically (modified Bessel functions), the
//! polar one with composite Gauss–Legendre quadrature. Values are tabulated on
//! a `(ξ, ψ)` grid, `ψ = angle(n, z)`, and interpolated bilinearly.

use std::f64::consts::PI;

const GL8_NODES: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL8_WEIGHTS: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];

/// `e^{-x}·I0(x)` for `x ≥ 0`.
pub(crate) fn bessel_i0e(x: f64) -> f64 {
    if x < 3.75 {
        let t = (x / 3.75).powi(2);
        let i0 = 1.0
            + t * (3.515_622_9
                + t * (3.089_942_4 + t * (1.206_749_2 + t * (0.265_973_2 + t * (0.036_076_8 + t * 0.004_581_3)))));
        i0 * (-x).exp()
    } else {
        let t = 3.75 / x;
        let p = 0.398_942_28
            + t * (0.013_285_92
                + t * (0.002_253_19
                    + t * (-0.001_575_65
                        + t * (0.009_162_81
                            + t * (-0.020_577_06 + t * (0.026_355_37 + t * (-0.016_476_33 + t * 0.003_923_77)))))));
        p / x.sqrt()
    }
}

/// `e^{-x}·I1(x)` for `x ≥ 0`.
pub(crate) fn bessel_i1e(x: f64) -> f64 {
    if x < 3.75 {
        let t = (x / 3.75).powi(2);
        let i1 = x
            * (0.5
                + t * (0.878_905_94
                    + t * (0.514_988_69
                        + t * (0.150_849_34 + t * (0.026_587_33 + t * (0.003_015_32 + t * 0.000_324_11))))));
        i1 * (-x).exp()
    } else {
        let t = 3.75 / x;
        let p = 0.398_942_28
            + t * (-0.039_880_24
                + t * (-0.003_620_18
                    + t * (0.001_638_01
                        + t * (-0.010_315_55
                            + t * (0.022_829_67 + t * (-0.028_953_12 + t * (0.017_876_54 - t * 0.004_200_59)))))));
        p / x.sqrt()
    }
}

/// Quadrature panel edges on [0, 1]: uniform, refined geometrically toward x = 1
/// where the anisotropy term concentrates the density for large σ.
fn panel_edges() -> Vec<f64> {
    let mut edges: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
    for k in 4..=16 {
        edges.push(1.0 - 0.5f64.powi(k));
    }
    edges.push(1.0);
    edges
}

/// Well averages at one `(ξ, ψ)` point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct WellAverages {
    /// `ln Z₊` up to a constant shared by both wells.
    pub ln_z: f64,
    /// `⟨m·n⟩₊`
    pub a: f64,
    /// `⟨m·e⊥⟩₊`
    pub b: f64,
}

pub(crate) fn well_averages(sigma: f64, xi: f64, psi: f64, edges: &[f64]) -> WellAverages {
    let (u, v) = (psi.cos(), psi.sin());
    let (mut z, mut za, mut zb) = (0.0, 0.0, 0.0);
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (node, weight) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
            for x in [mid - half * node, mid + half * node] {
                let s = (1.0 - x * x).max(0.0).sqrt();
                let arg = xi * v * s;
                // exponent shifted by −ξ − σ; ξ·(u·x + v·s) ≤ ξ keeps it ≤ 0
                let e = (xi * u * x + sigma * (x * x - 1.0) + arg - xi).exp() * weight * half;
                let i0 = bessel_i0e(arg);
                z += e * i0;
                za += e * i0 * x;
                zb += e * bessel_i1e(arg) * s;
            }
        }
    }
    WellAverages { ln_z: z.ln() + xi + sigma, a: za / z, b: zb / z }
}

/// Tabulated well averages for one particle and field range.
#[derive(Debug, Clone)]
pub(crate) struct WellTable {
    xi_max: f64,
    n_xi: usize,
    n_psi: usize,
    data: Vec<WellAverages>,
}

impl WellTable {
    pub const DEFAULT_XI_POINTS: usize = 65;
    pub const DEFAULT_PSI_POINTS: usize = 257;

    pub fn new(sigma: f64, xi_max: f64) -> Self {
        Self::with_resolution(sigma, xi_max, Self::DEFAULT_XI_POINTS, Self::DEFAULT_PSI_POINTS)
    }

    pub fn with_resolution(sigma: f64, xi_max: f64, n_xi: usize, n_psi: usize) -> Self {
        let edges = panel_edges();
        let n_xi = if xi_max > 0.0 { n_xi.max(2) } else { 2 };
        let mut data = Vec::with_capacity(n_xi * n_psi);
        for i in 0..n_xi {
            let xi = xi_max * i as f64 / (n_xi - 1) as f64;
            for j in 0..n_psi {
                let psi = PI * j as f64 / (n_psi - 1) as f64;
                data.push(well_averages(sigma, xi, psi, &edges));
            }
        }
        Self { xi_max, n_xi, n_psi, data }
    }

    /// Bilinear lookup; `xi` is clamped to `[0, xi_max]`.
    pub fn lookup(&self, xi: f64, psi: f64) -> WellAverages {
        let fx = if self.xi_max > 0.0 { (xi / self.xi_max).clamp(0.0, 1.0) * (self.n_xi - 1) as f64 } else { 0.0 };
        let fp = (psi / PI).clamp(0.0, 1.0) * (self.n_psi - 1) as f64;
        let i = (fx as usize).min(self.n_xi - 2);
        let j = (fp as usize).min(self.n_psi - 2);
        let (tx, tp) = (fx - i as f64, fp - j as f64);
        let at = |a: usize, b: usize| &self.data[a * self.n_psi + b];
        let (c00, c01, c10, c11) = (at(i, j), at(i, j + 1), at(i + 1, j), at(i + 1, j + 1));
        let mix = |f: fn(&WellAverages) -> f64| {
            let lo = f(c00) + tp * (f(c01) - f(c00));
            let hi = f(c10) + tp * (f(c11) - f(c10));
            lo + tx * (hi - lo)
        };
        WellAverages { ln_z: mix(|w| w.ln_z), a: mix(|w| w.a), b: mix(|w| w.b) }
    }
}
