use std::path::PathBuf;

use anyhow::Context;
use copsolve_core::fileio::save_instance;
use copsolve_core::rb::{rb_generate, RbParams};

use crate::{config_err, CliResult};

pub struct Args {
    pub out_dir: PathBuf,
    pub count: u64,
    pub seed: u64,
    pub arity: usize,
    pub vars: usize,
    pub gamma: f64,
    pub beta: f64,
    pub rho: f64,
    pub delta: u32,
    pub normalize: bool,
}

pub fn run(args: Args) -> CliResult<()> {
    let params = RbParams {
        arity: args.arity,
        num_variables: args.vars,
        domain_exponent: args.gamma,
        density: args.beta,
        tightness: args.rho,
        weight_range: args.delta,
        seed: args.seed,
    };
    if let Err(err) = params.validate() {
        return config_err(err);
    }
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    for seed in args.seed..args.seed + args.count {
        let mut instance = match rb_generate(&RbParams { seed, ..params }) {
            Ok(i) => i,
            Err(err) => return config_err(err),
        };
        if args.normalize {
            instance = instance
                .normalize_weights()
                .map_err(|err| crate::CliError::Config(err.into()))?;
        }
        let path = args.out_dir.join(format!("inst_{seed:08}.cop"));
        save_instance(&instance, &path)
            .map_err(|err| anyhow::anyhow!("{}: {err}", path.display()))?;
    }
    println!(
        "generated {} instances (n={}, d={}, e={}, forbidden/ctr={}) under {}",
        args.count,
        args.vars,
        params.domain_size(),
        params.constraint_count(),
        params.forbidden_per_constraint(),
        args.out_dir.display()
    );
    Ok(())
}
