//! Recover weights and a non-trivial transfer function from noiseless data.
//!
//! Brownian-only dictionaries over coating thickness at three viscosities:
//! the viscosity dependence is what separates the weights from the transfer
//! function. The generator mixes two coatings and every harmonic gets a gain
//! and delay.
//!
//! ```text
//! cargo run --release --example joint_estimation
//! ```

use mnpdict::dictionary::{build_set, BuildPlan, CondKey, ConditionGrid};
use mnpdict::estimator::{joint_estimate, normalize_solution, EstimateOptions, TransferFunction};
use mnpdict::magmodel::{ModelKind, SimOptions};
use mnpdict::metrics::marginals;
use mnpdict::signalio::{candidate_harmonics, synth_generate, SyntheticSpec};
use mnpdict::{DriveField, ParticleGrid, SimConstants, WeightVector};
use num_complex::Complex64;

fn main() -> mnpdict::Result<()> {
    let fs = 2e6;
    let drives = vec![DriveField::new(250.0, 10.0)?, DriveField::new(1000.0, 15.0)?];
    let plan = BuildPlan {
        grid: ParticleGrid::new(vec![20.0], vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0], vec![6.0])?,
        harmonics: drives.iter().map(|d| candidate_harmonics(d.samples_per_period(fs), 21)).collect::<mnpdict::Result<_>>()?,
        conditions: ConditionGrid::new(drives, vec![0.89, 3.32, 15.33])?,
        model: ModelKind::PureBrown,
        options: SimOptions { ensemble_size: 400, seed: 5, ..SimOptions::default() },
        constants: SimConstants::default(),
    };
    let dicts = build_set(&plan, None, None)?;

    let truth = WeightVector::new(vec![0.0, 0.6, 0.0, 0.0, 0.4, 0.0])?;
    let mut spec = SyntheticSpec::new(truth.clone(), None, 0);
    for k in 0..2 {
        let hs = dicts.harmonics(k)?.clone();
        let gains = hs.indices().iter().map(|&m| Complex64::from_polar(0.5 + 0.02 * m as f64, -0.01 * m as f64)).collect();
        spec.transfer.insert(k, TransferFunction { harmonics: hs, gains });
    }
    let (meas, _) = synth_generate(&spec, &dicts)?;
    let est = joint_estimate(&dicts, &meas, &EstimateOptions::default())?;
    // fix the scale so the 3rd-harmonic gain of the first drive matches the generator
    let est = normalize_solution(&est, 0, 3)?;
    let norm = est.weights.sum();

    println!("{} iterations, final objective {:.3e}", est.iterations_run, est.objective_trace.last().unwrap());
    println!("true weights      {:?}", truth.as_slice());
    println!("estimated weights {:?}", est.weights.as_slice().iter().map(|v| (v / norm * 1e4).round() / 1e4).collect::<Vec<_>>());
    let m = marginals(&est.weights, dicts.grid())?;
    println!("dh marginal {:?}", m.dh.values.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>());
    let g0 = spec.transfer[&0].gain(3).unwrap();
    for k in 0..2 {
        let tf = &est.transfer[&k];
        println!("drive {k}: harmonic | |H| estimated vs true | phase estimated vs true");
        for &h in tf.harmonics.indices().iter().take(5) {
            let e = tf.gain(h).unwrap() * g0.norm();
            let t = spec.transfer[&k].gain(h).unwrap();
            println!("  {h:>3} | {:.4} vs {:.4} | {:+.4} vs {:+.4}", e.norm(), t.norm(), e.arg(), t.arg());
        }
    }
    let fit = meas.get(CondKey::new(1, 1)).unwrap();
    println!("drive 1, viscosity 1: {} harmonics fitted", fit.harmonics.len());
    Ok(())
}
