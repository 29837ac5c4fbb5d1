//! Write raw measurement files with baselines, then ingest them: repetition
//! averaging, baseline subtraction, harmonic extraction and SBR selection.
//!
//! ```text
//! cargo run --release --example ingest_measurements -- [dir]
//! ```

use std::path::PathBuf;

use mnpdict::dictionary::ConditionGrid;
use mnpdict::signalio::{ingest_dir, write_measurement_csv, write_raw_file, RawHeader, RawKind, SbrOptions};
use mnpdict::DriveField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> mnpdict::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mnpdict-ingest"));
    std::fs::create_dir_all(&dir)?;
    let (fs, fd, periods) = (2e6, 1000.0, 4);
    let n = (fs / fd) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 1e-3).unwrap();
    let mut record = |len: usize, f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..len).map(|i| f(i) + noise.sample(&mut rng)).collect() };

    // baseline: a small feedthrough at the fundamental and 3rd harmonic
    let phase = |i: usize| std::f64::consts::TAU * (i % n) as f64 / n as f64;
    let feed = |i: usize| 0.5 * phase(i).sin() + 0.002 * (3.0 * phase(i)).sin();
    let base = RawHeader { kind: RawKind::Baseline, k: None, j: None, fs, fd, bp: 10.0, eta: None, m_fe: None, reps: 1, baselines: vec![] };
    write_raw_file(&dir.join("empty_pre.csv"), &base, &[record(periods * n, &feed)])?;
    write_raw_file(&dir.join("empty_post.csv"), &base, &[record(periods * n, &feed)])?;

    let conditions = ConditionGrid::new(vec![DriveField::new(fd, 10.0)?], vec![0.89, 3.32])?;
    for (j, eta) in conditions.viscosities.iter().enumerate() {
        // decaying odd harmonics whose roll-off steepens with viscosity
        let decay = 0.5 + 0.2 * j as f64;
        let particle = move |i: usize| (1..=15).step_by(2).map(|m| (m as f64 * phase(i) - 0.1 * m as f64).sin() * (-decay * m as f64).exp()).sum::<f64>();
        let reps: Vec<Vec<f64>> = (0..3).map(|_| record(periods * n, &|i| feed(i) + particle(i))).collect();
        let head = RawHeader {
            kind: RawKind::Measurement,
            k: Some(0),
            j: Some(j),
            eta: Some(*eta),
            m_fe: Some(0.25),
            reps: 3,
            baselines: vec!["empty_pre.csv".into(), "empty_post.csv".into()],
            ..base.clone()
        };
        write_raw_file(&dir.join(format!("sample_j{j}.csv")), &head, &reps)?;
    }

    let ing = ingest_dir(&dir, &conditions, &SbrOptions::default())?;
    println!("harmonics kept at every viscosity: {:?}", ing.selections[&0].indices());
    for (key, s) in ing.measurements.iter() {
        let amps: Vec<String> = s.values.iter().map(|v| format!("{:.2e}", v.norm())).collect();
        println!("  {key}: |S| = [{}]", amps.join(", "));
    }
    let mut csv = Vec::new();
    write_measurement_csv(&ing.measurements, &mut csv)?;
    std::fs::write(dir.join("harmonics.csv"), &csv)?;
    println!("harmonic table written to {}", dir.join("harmonics.csv").display());
    Ok(())
}
