//! Build a small coupled Brown–Néel dictionary set with an on-disk cache, then
//! reload it without simulating.
//!
//! ```text
//! cargo run --release --example build_dictionary -- [cache_dir] [ensemble]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use mnpdict::dictionary::{build_set, BuildPlan, ConditionGrid};
use mnpdict::magmodel::{ModelKind, SimOptions};
use mnpdict::signalio::candidate_harmonics;
use mnpdict::{DriveField, ParticleGrid, SimConstants};

fn main() -> mnpdict::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let dir = args.get(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mnpdict-example-cache"));
    let ensemble: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);

    let drives = vec![DriveField::new(1000.0, 10.0)?];
    let fs = 2e6;
    let plan = BuildPlan {
        grid: ParticleGrid::new(vec![15.0, 20.0], vec![30.0, 40.0], vec![6.0])?,
        harmonics: drives.iter().map(|d| candidate_harmonics(d.samples_per_period(fs), 31)).collect::<mnpdict::Result<_>>()?,
        conditions: ConditionGrid::new(drives, vec![0.89, 3.32])?,
        model: ModelKind::CoupledBrownNeel,
        options: SimOptions { ensemble_size: ensemble, seed: 1, fs, ..SimOptions::default() },
        constants: SimConstants::default(),
    };
    println!("{} atoms x {} conditions = {} simulations", plan.grid.len(), plan.conditions.len(), plan.simulations());

    let t = Instant::now();
    let set = build_set(&plan, None, Some(&dir))?;
    println!("built into {} in {:.1} s", dir.display(), t.elapsed().as_secs_f64());
    for (key, d) in set.iter() {
        let norms: Vec<String> = (0..d.cols()).map(|c| format!("{:.3e}", d.column(c).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())).collect();
        println!("  {key}: {}x{} at {} mPa·s, column norms [{}]", d.rows(), d.cols(), d.cond.eta, norms.join(", "));
    }

    let t = Instant::now();
    let again = build_set(&plan, None, Some(&dir))?;
    println!("second call loaded the cache in {:.3} s; identical: {}", t.elapsed().as_secs_f64(), again == set);
    Ok(())
}
