//! Solve a small non-negative least-squares problem and check its optimality certificate.
//!
//! ```text
//! cargo run --release --example nnls -- [seed]
//! ```

use mnpdict::estimator::{default_tolerance, kkt_violation, nnls, NnlsOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> mnpdict::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(10, 5, |_, _| rng.random_range(-1.0..1.0));
    let truth = DVector::from_vec(vec![0.0, 1.5, 0.0, 0.3, 0.0]);
    let b = &a * &truth + DVector::from_fn(10, |_, _| rng.random_range(-0.01..0.01));

    let x = nnls(&a, &b, NnlsOptions::default(), None)?;
    let tol = default_tolerance(&a, &b, 1e-9);
    println!("true x      {:?}", truth.as_slice());
    println!("estimated x {:?}", x.as_slice());
    println!("residual    {:.3e}", (&a * DVector::from_column_slice(x.as_slice()) - &b).norm());
    println!("KKT violation {:.3e} (tolerance {tol:.3e})", kkt_violation(&a, &b, x.as_slice()));
    Ok(())
}
