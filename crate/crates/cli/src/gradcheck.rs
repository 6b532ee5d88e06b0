use std::fmt::Write as _;
use std::path::PathBuf;

use ptt_core::diagnostics::{run_gradcheck, GradModule};
use ptt_core::tensor::GradcheckOptions;

use crate::{manifest, Failure, Run};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// `all`, `ptt` (everything but the encoders) or one module name.
    #[arg(long, default_value = "all")]
    module: String,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Coordinates checked per parameter; all when omitted.
    #[arg(long)]
    max_coords: Option<usize>,
    /// Adds this offset to every analytic gradient.
    #[arg(long)]
    inject_fault: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn modules(name: &str) -> anyhow::Result<Vec<GradModule>> {
    Ok(match name {
        "all" => GradModule::ALL.to_vec(),
        "ptt" => GradModule::ALL
            .into_iter()
            .filter(|&m| m != GradModule::Encoders)
            .collect(),
        other => vec![other.parse().map_err(Failure::usage)?],
    })
}

pub fn run(run: &Run, a: Args) -> anyhow::Result<()> {
    let mods = modules(&a.module)?;
    if !(a.eps > 0.0 && a.tol > 0.0) {
        return Err(Failure::usage("--eps and --tol must be positive"));
    }
    let opts = GradcheckOptions {
        eps: a.eps,
        prefixes: Vec::new(),
        max_coords: a.max_coords,
        inject_fault: a.inject_fault,
    };
    let mut csv = String::from("module,group,coords,max_abs_error,rel_error,pass\n");
    let mut failed = Vec::new();
    for m in mods {
        let rep = run_gradcheck(m, &opts)?;
        let ok = rep.passes(a.tol);
        println!(
            "{}: {} (max rel error {:.3e} over {} groups)",
            m,
            if ok { "pass" } else { "FAIL" },
            rep.max_rel_error(),
            rep.groups.len()
        );
        for g in &rep.groups {
            let pass = g.rel_error < a.tol;
            println!("  {:<40} {:>6} {:.3e}", g.name, g.coords, g.rel_error);
            writeln!(
                csv,
                "{m},{},{},{:e},{:e},{pass}",
                g.name, g.coords, g.max_abs_error, g.rel_error
            )
            .unwrap();
        }
        if !ok {
            failed.push(m.name());
        }
    }
    crate::create_dir(&a.out)?;
    let outputs = vec![crate::write_text(&a.out.join("gradcheck.csv"), &csv)?];
    let config = serde_json::json!({
        "module": a.module,
        "eps": a.eps,
        "tol": a.tol,
        "max_coords": a.max_coords,
        "inject_fault": a.inject_fault,
    });
    manifest::write(
        run,
        &a.out.join("manifest.json"),
        "gradcheck",
        config,
        None,
        outputs,
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!("gradient check failed for {}", failed.join(", "))).into())
    }
}
