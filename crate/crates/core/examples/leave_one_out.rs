//! Leave-one-viscosity-out prediction on synthetic data.
//!
//! Each viscosity is held out in turn: weights and transfer functions come from
//! the others, and the held-out signal is predicted with that viscosity's
//! dictionary. Reports are written to a directory as JSON and CSV.
//!
//! ```text
//! cargo run --release --example leave_one_out -- [out_dir] [ensemble]
//! ```

use std::path::PathBuf;

use mnpdict::dictionary::{build_set, BuildPlan, ConditionGrid};
use mnpdict::estimator::EstimateOptions;
use mnpdict::magmodel::{ModelKind, SimOptions};
use mnpdict::predictor::loo_sweep;
use mnpdict::signalio::{candidate_harmonics, synth_generate, SyntheticSpec};
use mnpdict::{DriveField, ParticleGrid, SimConstants, WeightVector};

fn main() -> mnpdict::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = args.get(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mnpdict-loo"));
    let ensemble: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);
    let fs = 2e6;
    let drives = vec![DriveField::new(250.0, 10.0)?, DriveField::new(1000.0, 10.0)?];
    let plan = BuildPlan {
        grid: ParticleGrid::new(vec![18.0, 20.0, 22.0], vec![40.0], vec![6.0])?,
        harmonics: drives.iter().map(|d| candidate_harmonics(d.samples_per_period(fs), 101)).collect::<mnpdict::Result<_>>()?,
        conditions: ConditionGrid::new(drives, vec![0.89, 2.08, 8.31])?,
        model: ModelKind::CoupledBrownNeel,
        options: SimOptions { ensemble_size: ensemble, seed: 5, fs, ..SimOptions::default() },
        constants: SimConstants::default(),
    };
    let dicts = build_set(&plan, None, None)?;
    let truth = WeightVector::new(vec![0.3, 0.7, 0.0])?;
    let (meas, _) = synth_generate(&SyntheticSpec::new(truth, Some(10.0), 11), &dicts)?;

    let sweep = loo_sweep(&dicts, &meas, &EstimateOptions::default(), fs)?;
    for rep in &sweep.reports {
        let j = rep.excluded.expect("leave-one-out reports name their exclusion");
        println!("held out {} mPa·s: worst NRMSE {:.3}%", plan.conditions.viscosities[j], rep.max_nrmse().unwrap_or(f64::NAN));
        rep.write_dir(&out.join(format!("j{j}")))?;
    }
    for row in &sweep.weight_nwd {
        println!("  j={} {} vs all-data weights: {:.4}", row.j, row.metric, row.value);
    }
    println!("reports written under {}", out.display());
    Ok(())
}
