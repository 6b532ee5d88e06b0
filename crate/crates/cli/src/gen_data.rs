use std::path::PathBuf;

use ptt_core::synth::{generate_sequence, write_dataset, SceneConfig};

use crate::{manifest, Failure, Run};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Number of moving objects; 0 gives a clutter-only scene.
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Background points per frame.
    #[arg(long)]
    clutter: Option<usize>,
    /// Scene config JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset path; the manifest goes next to it.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(run: &Run, a: Args) -> anyhow::Result<()> {
    let mut cfg: SceneConfig = crate::load_config(a.config.as_deref())?;
    if let Some(k) = a.objects {
        cfg.num_objects = k;
    }
    if let Some(t) = a.frames {
        cfg.num_frames = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(c) = a.clutter {
        cfg.clutter_points = c;
    }
    if cfg.num_frames == 0 {
        return Err(Failure::usage("--frames must be at least 1"));
    }
    if cfg.motions.len() > cfg.num_objects {
        return Err(Failure::usage("config lists more motions than objects"));
    }
    let ds = generate_sequence(&cfg);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        crate::create_dir(parent)?;
    }
    write_dataset(&a.out, &ds)?;
    let mut name = a.out.clone().into_os_string();
    name.push(".manifest.json");
    manifest::write(
        run,
        &PathBuf::from(name),
        "gen-data",
        serde_json::to_value(&cfg)?,
        Some(cfg.seed),
        vec![a.out.clone()],
    )?;
    println!(
        "wrote {} frames with {} objects to {}",
        ds.frames.len(),
        cfg.num_objects,
        a.out.display()
    );
    Ok(())
}
