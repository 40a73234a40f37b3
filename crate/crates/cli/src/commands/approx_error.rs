use latim_core::eval::{approx_error_sweep, gen_copy_batch, SweepTable};
use latim_core::{ActivationStrategy, ModelConfig, ModelWeights, Real};

use super::{dispatch, ensure_dir, materialize, parse_list, text_table, LoadedModel};
use crate::args::ApproxErrorArgs;
use crate::csv_io::{format_value, write_table};
use crate::error::{CliError, CliResult};

fn sweep_typed<T: Real>(
    weights: &ModelWeights<T>,
    config: &ModelConfig,
    a: &ApproxErrorArgs,
    strategies: &[ActivationStrategy],
) -> CliResult<SweepTable> {
    let batch: Vec<Vec<usize>> = gen_copy_batch(a.count, a.copy_len, config.vocab_size, a.seed)?
        .iter()
        .map(|c| c.sequence())
        .collect();
    let mode = materialize(2 * a.copy_len + 1, a.stream)?;
    Ok(approx_error_sweep(weights, config, &batch, strategies, mode)?)
}

pub fn run(a: &ApproxErrorArgs) -> CliResult<()> {
    let strategies: Vec<ActivationStrategy> = parse_list(&a.strategies)?;
    let model = LoadedModel::load(&a.bundle)?;
    let table = dispatch!(&model, sweep_typed(a, &strategies))?;

    ensure_dir(&a.out)?;
    let meta = [
        ("variant", model.config().variant.to_string()),
        ("count", a.count.to_string()),
        ("copy_len", a.copy_len.to_string()),
        ("seed", a.seed.to_string()),
        ("error", "mean over tokens of the l2 gap between block output and summed contributions".to_string()),
    ];
    let mut header = vec!["strategy".to_string()];
    header.extend(table.buckets.iter().map(|b| b.label()));
    let rows = |fmt: &dyn Fn(f64) -> String| -> Vec<Vec<String>> {
        table
            .strategies
            .iter()
            .zip(&table.errors)
            .map(|(s, errs)| std::iter::once(s.to_string()).chain(errs.iter().map(|&e| fmt(e))).collect())
            .collect()
    };
    write_table(&a.out.join("approx_error.csv"), &meta, &header, &rows(&format_value))?;

    let mut layer_header = vec!["strategy".to_string()];
    layer_header.extend((0..model.config().num_layers).map(|l| l.to_string()));
    let layer_rows: Vec<Vec<String>> = table
        .strategies
        .iter()
        .zip(&table.per_layer)
        .map(|(s, errs)| std::iter::once(s.to_string()).chain(errs.iter().map(|&e| format_value(e))).collect())
        .collect();
    write_table(&a.out.join("approx_error_layers.csv"), &meta, &layer_header, &layer_rows)?;

    let text = text_table(&header, &rows(&|e| format!("{e:.4}")));
    let path = a.out.join("approx_error.txt");
    std::fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
    print!("{text}");
    Ok(())
}
