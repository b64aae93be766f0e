//! ε-sweep on the homogeneous and γ = 3 scenarios: sup-norm gaps between
//! consecutive members on the interior window and their fitted slopes.
//!
//! ```bash
//! cargo run --release --example stability_sweep [scenario ...]
//! ```

use hj_lab::rate::stability_sweep;
use hj_lab::scenarios::scenario;

fn main() -> hj_lab::Result<()> {
    let mut keys: Vec<String> = std::env::args().skip(1).collect();
    if keys.is_empty() {
        keys = vec!["homogeneous".into(), "gamma".into()];
    }
    for key in keys {
        let sc = scenario(&key)?;
        let r = stability_sweep(&sc.sweep)?;
        println!("== {key} (predicted slope {:.3}, band {:?})", r.predicted, sc.band);
        print!("{}", r.csv());
        for (t, s) in r.times.iter().zip(r.slopes()) {
            println!("t = {t:<5} slope {}", s.map_or("n/a".into(), |v| format!("{v:.3}")));
        }
        if let Some(d) = r.discretization {
            println!("refinement estimate {d:.2e}, smallest gap {:.2e}, refused: {}", r.min_gap, r.refused);
        }
    }
    Ok(())
}
