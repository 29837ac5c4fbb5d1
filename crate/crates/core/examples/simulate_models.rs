//! Compare the four magnetization models for one particle at two viscosities.
//!
//! Prints, per model and viscosity, the 3rd-harmonic amplitude normalized by the
//! fundamental, the phase lag of the fundamental, and the zero-crossing width of
//! the harmonic-filtered particle signal.
//!
//! ```text
//! cargo run --release --example simulate_models -- [ensemble_size] [freq_hz] [dt_s]
//! ```

use std::time::Instant;

use mnpdict::magmodel::{mnp_signal, simulate, ModelKind, SimOptions};
use mnpdict::metrics::zero_crossing_time;
use mnpdict::spectral::{extract_harmonics, harmonic_coefficient, synthesize_time};
use mnpdict::{Condition, DriveField, HarmonicSet, ParticleParams, SimConstants};

fn main() -> mnpdict::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let ensemble: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let freq: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1000.0);

    let particle = ParticleParams::new(20.0, 40.0, 6.0)?;
    let constants = SimConstants::default();
    let dt: Option<f64> = args.get(3).and_then(|s| s.parse().ok());
    // harmonic-filtered rendering: odd harmonics 3..31, fundamental removed
    let hs = HarmonicSet::odd_up_to(31)?;
    let opt = SimOptions { ensemble_size: ensemble, seed: 7, dt, ..SimOptions::default() };

    println!("particle dc=20 nm, dh=60 nm, K=6 kJ/m^3; drive {freq} Hz, 10 mT; ensemble {ensemble}");
    println!("{:<22} {:>8} {:>10} {:>10} {:>10} {:>8}", "model", "eta", "|M3|/|M1|", "lag1(rad)", "t_zc(%)", "secs");
    for model in ModelKind::ALL {
        for eta in [0.89, 3.32, 15.33] {
            let cond = Condition::new(DriveField::new(freq, 10.0)?, eta)?;
            let start = Instant::now();
            let mag = simulate(model, &particle, &constants, &cond, &opt)?;
            let secs = start.elapsed().as_secs_f64();
            let m1 = harmonic_coefficient(&mag.samples, 1);
            let m3 = harmonic_coefficient(&mag.samples, 3);
            // drive is sin(ωt), whose coefficient is −i; lag is measured relative to it
            let lag = -(m1 / num_complex::Complex64::new(0.0, -1.0)).arg();
            let signal = mnp_signal(&mag, &particle)?;
            let filtered = synthesize_time(&extract_harmonics(&signal, &hs)?, signal.fs)?;
            let zc = zero_crossing_time(&filtered).map(|z| z.percent).unwrap_or(f64::NAN);
            println!(
                "{:<22} {:>8.2} {:>10.4} {:>10.4} {:>10.3} {:>8.2}",
                format!("{model:?}"),
                eta,
                m3.norm() / m1.norm(),
                lag,
                zc,
                secs
            );
        }
    }
    Ok(())
}
