//! Evaluation metrics on simulated signals: NRMSE, zero-crossing time,
//! normalized RMS amplitude and Wasserstein distance between weight marginals.
//!
//! ```text
//! cargo run --release --example metrics
//! ```

use mnpdict::magmodel::{mnp_signal, simulate, tau_brown, ModelKind, SimOptions};
use mnpdict::metrics::{marginals, nrmse, tau_hat, vrms_hat, zero_crossing_time};
use mnpdict::spectral::{extract_harmonics, synthesize_time};
use mnpdict::{Condition, DriveField, HarmonicSet, ParticleGrid, ParticleParams, SimConstants, WeightVector};

fn main() -> mnpdict::Result<()> {
    let c = SimConstants::default();
    let p = ParticleParams::new(20.0, 40.0, 6.0)?;
    let drive = DriveField::new(1000.0, 10.0)?;
    let opt = SimOptions { ensemble_size: 1000, seed: 9, ..SimOptions::default() };
    let band = HarmonicSet::odd_up_to(31)?;

    let render = |model: ModelKind, eta: f64| -> mnpdict::Result<mnpdict::TimeSignal> {
        let mag = simulate(model, &p, &c, &Condition::new(drive, eta)?, &opt)?;
        let sig = mnp_signal(&mag, &p)?;
        synthesize_time(&extract_harmonics(&sig, &band)?, sig.fs)
    };
    let langevin = render(ModelKind::LangevinEquilibrium, 0.89)?;
    println!("{:<20} {:>6} {:>10} {:>10} {:>12} {:>10}", "model", "eta", "tau_B %", "t_zc %", "v_rms_hat", "NRMSE %");
    for model in [ModelKind::CoupledBrownNeel, ModelKind::PureBrown] {
        for eta in [0.89, 3.32] {
            let s = render(model, eta)?;
            println!(
                "{:<20} {:>6.2} {:>10.3} {:>10.3} {:>12.4e} {:>10.2}",
                format!("{model:?}"),
                eta,
                tau_hat(tau_brown(eta, &p, &c), drive.freq),
                zero_crossing_time(&s)?.percent,
                vrms_hat(&s, &drive, 1.0)?,
                nrmse(&langevin.samples, &s.samples)?
            );
        }
    }
    println!("(NRMSE against the equilibrium response)");

    let grid = ParticleGrid::new(vec![15.0, 20.0, 25.0], vec![30.0, 40.0], vec![4.0, 8.0])?;
    let a = WeightVector::delta(grid.len(), grid.find(20.0, 40.0, 8.0).unwrap());
    let b = WeightVector::uniform(grid.len());
    let d = marginals(&a, &grid)?.nwd(&marginals(&b, &grid)?)?;
    println!("NWD between a single atom and uniform weights: dc {:.3}, dh {:.3}, K {:.3}", d[0], d[1], d[2]);
    Ok(())
}
