use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::Context;
use copsolve_core::nn::{save_params, ScorerParams};
use copsolve_core::trainer::{train_from, TrainConfig, TrainEvent};

use crate::{CliError, CliResult};

pub struct Args {
    pub instances: PathBuf,
    pub out: PathBuf,
    pub log: Option<PathBuf>,
    pub t_max: u64,
    pub n_sim: u32,
    pub buffer: usize,
    pub batch: usize,
    pub c1: f64,
    pub c3: f64,
    pub c4: f64,
    pub alpha_step: f64,
    pub sync_every: u64,
    pub no_instance_sync: bool,
    pub no_periodic_sync: bool,
    pub lr: f64,
    pub seed: u64,
    pub embed_dim: usize,
    pub rounds: usize,
    pub hidden: usize,
    pub checkpoint_every: Option<u64>,
    pub checkpoint_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub dump_trees: Option<PathBuf>,
    pub playout: crate::Playout,
}

pub fn run(args: Args) -> CliResult<()> {
    let instances: Vec<_> = super::load_instances(&args.instances)?
        .into_iter()
        .map(|(_, inst)| inst)
        .collect();
    let config = TrainConfig {
        embed_dim: args.embed_dim,
        rounds: args.rounds,
        hidden: args.hidden,
        t_max: args.t_max,
        n_sim: args.n_sim,
        buffer_capacity: args.buffer,
        batch_size: args.batch,
        c1: args.c1,
        c3: args.c3,
        c4: args.c4,
        alpha_step: args.alpha_step,
        target_sync_period: args.sync_every,
        sync_periodic: !args.no_periodic_sync,
        sync_per_instance: !args.no_instance_sync,
        learning_rate: args.lr,
        seed: args.seed,
        checkpoint_every: args.checkpoint_every,
        playout: match args.playout {
            crate::Playout::Guided => copsolve_core::mcts::PlayoutPolicy::Guided,
            crate::Playout::Random => copsolve_core::mcts::PlayoutPolicy::Random,
        },
    };
    if let Err(err) = config.validate() {
        return Err(CliError::Config(err.into()));
    }
    let initial = match &args.resume {
        Some(path) => (*super::load_weights(path)?).clone(),
        None => ScorerParams::init(config.embed_dim, config.rounds, config.hidden, config.seed),
    };

    let mut log = match &args.log {
        Some(path) => {
            let mut w = BufWriter::new(
                File::create(path).with_context(|| format!("creating {}", path.display()))?,
            );
            writeln!(w, "instance,iteration,loss,incumbent,buffer").context("writing log")?;
            Some(w)
        }
        None => None,
    };
    if let Some(dir) = &args.dump_trees {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let checkpoint_dir = args.checkpoint_dir.clone().unwrap_or_else(|| {
        args.out.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
    });
    if args.checkpoint_every.is_some() {
        std::fs::create_dir_all(&checkpoint_dir)
            .with_context(|| format!("creating {}", checkpoint_dir.display()))?;
    }

    let t_max = config.t_max;
    let mut hook_error: Option<anyhow::Error> = None;
    let trained = train_from(initial, &instances, &config, &mut |event| match event {
        TrainEvent::Iteration { record, tree } => {
            if let Some(w) = log.as_mut() {
                let incumbent =
                    record.incumbent.map(|v| format!("{v}")).unwrap_or_default();
                let _ = writeln!(
                    w,
                    "{},{},{},{},{}",
                    record.instance, record.iteration, record.loss, incumbent, record.buffer_len
                );
            }
            if let Some(dir) = &args.dump_trees {
                if record.iteration + 1 == t_max {
                    let path = dir.join(format!("tree_{:04}.txt", record.instance));
                    let result = File::create(&path).map(BufWriter::new).and_then(|mut w| {
                        tree.dump_stats(&mut w)?;
                        w.flush()
                    });
                    if let (Err(err), None) = (result, hook_error.as_ref()) {
                        hook_error = Some(anyhow::anyhow!("{}: {err}", path.display()));
                    }
                }
            }
        }
        TrainEvent::Checkpoint { step, params } => {
            let path = checkpoint_dir.join(format!("step_{step:08}.weights"));
            if let (Err(err), None) = (save_params(params, &path), hook_error.as_ref()) {
                hook_error = Some(anyhow::anyhow!("{}: {err}", path.display()));
            }
        }
        TrainEvent::InstanceStart { .. } => {}
        TrainEvent::InstanceSkipped { index, reason } => {
            eprintln!("instance {index} skipped: {reason}");
        }
    })
    .map_err(|err| anyhow::anyhow!("training failed: {err}"))?;
    if let Some(err) = hook_error {
        return Err(CliError::Runtime(err));
    }

    save_params(&trained, &args.out).map_err(|err| anyhow::anyhow!("{}: {err}", args.out.display()))?;
    if let Some(w) = log.as_mut() {
        w.flush().context("flushing log")?;
    }
    println!(
        "trained on {} instances for {} iterations each; weights -> {}",
        instances.len(),
        config.t_max,
        args.out.display()
    );
    Ok(())
}
