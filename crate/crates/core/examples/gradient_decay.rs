//! Decay of the fast gradient `|∂_y u^ε(t)|` in ε and t on the well datum.
//!
//! ```bash
//! cargo run --release --example gradient_decay
//! ```

use hj_lab::rate::gradient_decay_fit;
use hj_lab::scenarios::scenario;

fn main() -> hj_lab::Result<()> {
    let sc = scenario("gradient")?;
    let g = gradient_decay_fit(&sc.sweep)?;
    let r = &g.eps_report;
    println!("{:>8} {}", "eps", r.times.iter().map(|t| format!("{:>12}", format!("t={t}"))).collect::<String>());
    for (i, e) in r.eps.iter().enumerate() {
        println!("{e:>8} {}", r.errors.iter().map(|c| format!("{:>12.4e}", c[i])).collect::<String>());
    }
    println!("eps-slopes per t: {:?}", r.slopes());
    println!("t-slopes per eps: {:?}", g.t_slopes());
    Ok(())
}
