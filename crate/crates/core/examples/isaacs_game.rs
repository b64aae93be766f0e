//! Zero-sum game Hamiltonians: ordering of the two game values and the
//! stability sweeps of both Isaacs scenarios.
//!
//! ```bash
//! cargo run --release --example isaacs_game
//! ```

use hj_lab::rate::stability_sweep;
use hj_lab::scenarios::{isaacs_comparison, scenario, ScenarioOverrides};

fn main() -> hj_lab::Result<()> {
    let o = ScenarioOverrides::default();
    let single = isaacs_comparison(&o, true)?;
    println!("singleton A: max |upper - lower| = {:.2e}", single.max_gap);
    let general = isaacs_comparison(&o, false)?;
    println!("general: min (upper - lower) = {:.3e}, max gap {:.3e}, h = {:.3}", general.margin, general.max_gap, general.h);
    for key in ["isaacs-upper", "isaacs-lower"] {
        let r = stability_sweep(&scenario(key)?.sweep)?;
        println!("{key}: slopes {:?}", r.slopes());
    }
    Ok(())
}
