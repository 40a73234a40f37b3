use latim_core::bundle::save_bundle;
use latim_core::{generate_random_model, Dtype, ModelConfig, Variant};

use super::parse_strategy;
use crate::args::GenModelArgs;
use crate::error::{CliError, CliResult};

pub fn config_from_args(a: &GenModelArgs) -> CliResult<ModelConfig> {
    let variant: Variant = a.variant.parse().map_err(|e: latim_core::Error| CliError::Usage(e.to_string()))?;
    let dtype: Dtype = a.dtype.parse().map_err(|e: latim_core::Error| CliError::Usage(e.to_string()))?;
    let mut config = ModelConfig::new(variant, a.layers, a.dim, a.state, a.conv, a.heads, a.vocab);
    if let Some(inner) = a.inner {
        config.inner_dim = inner;
    }
    if let Some(rank) = a.dt_rank {
        config.dt_rank = rank;
    }
    config.dtype = dtype;
    config.activation_strategy = parse_strategy(&a.strategy)?;
    config.tied_embeddings = a.tied;
    config.validate()?;
    Ok(config)
}

pub fn summary(c: &ModelConfig) -> String {
    format!(
        "variant={} layers={} dim={} inner={} state={} conv={} heads={} vocab={} dt_rank={} activation={} dtype={} tied={}",
        c.variant,
        c.num_layers,
        c.model_dim,
        c.inner_dim,
        c.state_dim,
        c.conv_width,
        c.num_heads,
        c.vocab_size,
        c.dt_rank,
        c.activation_strategy,
        c.dtype,
        c.tied_embeddings
    )
}

pub fn run(a: &GenModelArgs) -> CliResult<()> {
    let config = config_from_args(a)?;
    match config.dtype {
        Dtype::F32 => save_bundle(&generate_random_model::<f32>(&config, a.seed)?, &config, &a.out)?,
        Dtype::F64 => save_bundle(&generate_random_model::<f64>(&config, a.seed)?, &config, &a.out)?,
    }
    println!("{}", summary(&config));
    println!("seed={} wrote {}", a.seed, a.out.display());
    Ok(())
}
