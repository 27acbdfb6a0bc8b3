//! Finite-difference checks of every operator and of the whole toy network.
//!
//! cargo run --example gradient_check

use scd::model::check_model;
use scd::tensor::gradcheck::GradCheckConfig;
use scd::tensor::gradcheck_suite::{run, OPS};

fn main() -> scd::Result<()> {
    let cfg = GradCheckConfig::default();
    for op in OPS {
        let r = run(op, 0, &cfg)?;
        println!("{:<16} {:.2e} {}", op, r.max_rel_error(), if r.passed() { "ok" } else { "FAIL" });
    }

    let faulty = GradCheckConfig { analytic_fault: Some(0.01), ..cfg.clone() };
    let r = run("linear", 0, &faulty)?;
    println!("linear with a 1% gradient fault: {:.2e}, passed = {}", r.max_rel_error(), r.passed());

    let model_cfg = GradCheckConfig { tolerance: 1e-3, max_coords: Some(2), ..cfg };
    let r = check_model(0, &model_cfg)?;
    let worst = r.worst().expect("some tensors");
    println!(
        "toy model: {} tensors, worst {} at {:.2e}, passed = {}",
        r.tensors.len(),
        worst.name,
        worst.max_rel_error,
        r.passed()
    );
    Ok(())
}
