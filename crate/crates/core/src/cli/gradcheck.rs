use serde::Serialize;

use super::config::{env_seed, write_effective};
use super::{GradcheckArgs, Outcome, Scope};
use crate::model::check_model;
use crate::tensor::gradcheck::{GradCheckConfig, GradCheckReport};
use crate::tensor::gradcheck_suite::{self, OPS};
use crate::{Error, Result};

const FAULT: f64 = 0.01;

#[derive(Debug, Serialize)]
struct Effective {
    scope: Scope,
    ops: Vec<String>,
    tolerance: f64,
    seed: u64,
    seeds: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_coords: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inject_fault: Option<String>,
}

#[derive(Debug, Serialize)]
struct Line {
    target: String,
    seed: u64,
    passed: bool,
    max_rel_error: f64,
    worst_tensor: Option<String>,
    checked: usize,
    non_finite: Option<String>,
}

pub fn run(a: GradcheckArgs) -> Result<Outcome> {
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let ops: Vec<String> = match (a.scope, &a.op) {
        (Scope::Model, _) => vec!["model".into()],
        (Scope::Op, Some(op)) if OPS.contains(&op.as_str()) => vec![op.clone()],
        (Scope::Op, Some(op)) => {
            return Err(Error::Config(format!("unknown op {op:?}; known: {}", OPS.join(", "))));
        }
        (Scope::Op, None) => OPS.iter().map(|s| s.to_string()).collect(),
    };
    if let Some(f) = &a.inject_fault {
        if !ops.contains(f) {
            return Err(Error::Config(format!("--inject-fault {f:?} names nothing being checked")));
        }
    }
    if a.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let tolerance = a.tolerance.unwrap_or(match a.scope {
        Scope::Op => 1e-4,
        Scope::Model => 1e-3,
    });
    let max_coords = a.max_coords.or(match a.scope {
        Scope::Op => None,
        Scope::Model => Some(2),
    });
    let eff = Effective {
        scope: a.scope,
        ops: ops.clone(),
        tolerance,
        seed,
        seeds: a.seeds,
        max_coords,
        inject_fault: a.inject_fault.clone(),
    };
    if let Some(dir) = &a.out {
        write_effective(dir, &eff)?;
    }
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for op in &ops {
        for s in seed..seed + a.seeds {
            let cfg = GradCheckConfig {
                tolerance,
                max_coords,
                seed: s,
                analytic_fault: (a.inject_fault.as_deref() == Some(op.as_str())).then_some(FAULT),
                ..Default::default()
            };
            let report: GradCheckReport = match a.scope {
                Scope::Op => gradcheck_suite::run(op, s, &cfg)?,
                Scope::Model => check_model(s, &cfg)?,
            };
            let worst = report.worst();
            let line = Line {
                target: op.clone(),
                seed: s,
                passed: report.passed(),
                max_rel_error: report.max_rel_error(),
                worst_tensor: worst.map(|w| w.name.clone()),
                checked: report.tensors.iter().map(|t| t.checked).sum(),
                non_finite: report.non_finite.clone(),
            };
            println!(
                "{} {:<18} seed {:<3} max rel error {:.3e} ({} coords, worst {})",
                if line.passed { "ok  " } else { "FAIL" },
                op,
                s,
                line.max_rel_error,
                line.checked,
                line.worst_tensor.as_deref().unwrap_or("-"),
            );
            if !line.passed && !failed.contains(op) {
                failed.push(op.clone());
            }
            lines.push(line);
        }
    }
    if let Some(dir) = &a.out {
        let path = dir.join("gradcheck.json");
        let text = serde_json::to_string_pretty(&lines).expect("report serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    if failed.is_empty() {
        println!("all {} check(s) passed at tolerance {tolerance:e}", lines.len());
        Ok(Outcome::Ok)
    } else {
        eprintln!("gradient check failed for: {}", failed.join(", "));
        Ok(Outcome::CheckFailed)
    }
}
