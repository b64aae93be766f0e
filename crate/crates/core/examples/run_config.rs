//! Drives the experiment runner from code: a dry-run validation, then a
//! small rate sweep written to `out/example-rate`.
//!
//! ```bash
//! cargo run --release --example run_config
//! ```

use std::path::Path;

use hj_lab::runner::{run, validate, ExperimentConfig};

fn main() -> hj_lab::Result<()> {
    let cfg = ExperimentConfig::from_toml(
        r#"
        scenario = "fully-nonlinear"
        eps = [0.4, 0.2, 0.1]

        [grid]
        nx = 11
        ny = 201
        "#,
    )?;
    let check = validate("rate", &cfg);
    println!("valid: {} cfl {:?}", check.ok, check.cfl);
    let out = Path::new("out/example-rate");
    for f in run("rate", &cfg, out)? {
        println!("wrote {}", out.join(f).display());
    }
    Ok(())
}
