use std::fs;
use std::path::PathBuf;

use latim_core::aggregation::{AttributionMatrix, LayerTag, Method};
use latim_core::attribute::{attribute, AttributionRequest, LayerSelection};
use latim_core::eval::{extract_copy_block, gen_copy_batch, gold_mask, score_block, Metric};
use latim_core::{ModelConfig, ModelWeights, Real};

use super::{dispatch, ensure_dir, materialize, method_file_stem, parse_ids, parse_list, parse_strategy, LayerArg, LoadedModel};
use crate::args::{DecomposeArgs, TokenArgs};
use crate::csv_io::write_matrix;
use crate::error::{CliError, CliResult};
use crate::heatmap;

/// Token ids plus the copy source length when they came from the generator.
pub fn read_tokens(input: &TokenArgs, vocab: usize, seed: u64) -> CliResult<(Vec<usize>, Option<usize>)> {
    if let Some(t) = &input.tokens {
        return Ok((parse_ids(t)?, None));
    }
    if let Some(path) = &input.tokens_file {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        return Ok((parse_ids(&text)?, None));
    }
    if let Some(s) = input.copy_len {
        let inst = gen_copy_batch(1, s, vocab, seed)?.remove(0);
        return Ok((inst.sequence(), Some(s)));
    }
    Err(CliError::Usage("give one of --tokens, --tokens-file or --copy-len".into()))
}

fn layer_label(tag: LayerTag) -> String {
    match tag {
        LayerTag::Layer(l) => format!("layer{l}"),
        LayerTag::Aggregated => "aggregated".into(),
    }
}

struct Plan<'a> {
    args: &'a DecomposeArgs,
    methods: Vec<Method>,
    layer: LayerArg,
}

fn decompose_typed<T: Real>(weights: &ModelWeights<T>, config: &ModelConfig, plan: &Plan) -> CliResult<Vec<PathBuf>> {
    let a = plan.args;
    let (tokens, copy_len) = read_tokens(&a.input, config.vocab_size, a.seed)?;
    if tokens.is_empty() {
        return Err(CliError::Data("token sequence is empty".into()));
    }
    let mut request = AttributionRequest::new(plan.methods.clone());
    request.strategy = parse_strategy(&a.strategy)?;
    request.materialize = materialize(tokens.len(), a.stream)?;
    request.targets = a.targets.as_deref().map(parse_ids).transpose()?;
    request.layers = match plan.layer {
        LayerArg::All | LayerArg::BestBy(_) => LayerSelection::All,
        LayerArg::Aggregated => LayerSelection::Layers(vec![]),
        LayerArg::Index(l) => LayerSelection::Layers(vec![l]),
    };
    let out = attribute(weights, config, &tokens, &request)?;

    let mut keep: Vec<&AttributionMatrix> = out.matrices.iter().collect();
    let mut selected_by = None;
    if let LayerArg::BestBy(metric) = plan.layer {
        let s = copy_len.ok_or_else(|| CliError::Usage("best-by needs a copy-task input (--copy-len)".into()))?;
        keep = best_layers(&out.matrices, s, metric)?;
        selected_by = Some(metric);
    }

    ensure_dir(&a.out)?;
    let mut written = Vec::new();
    for c in keep {
        let stem = format!("{}_{}", method_file_stem(c.method), layer_label(c.layer));
        let path = a.out.join(format!("{stem}.csv"));
        let mut meta = vec![
            ("variant", config.variant.to_string()),
            ("strategy", request.strategy.to_string()),
            ("tokens", tokens.len().to_string()),
        ];
        if let LayerTag::Layer(l) = c.layer {
            if let Some((_, gap)) = out.reconstruction_gap.iter().find(|(k, _)| *k == l) {
                meta.push(("reconstruction_gap", format!("{gap:.9e}")));
            }
        }
        if c.method == Method::AltiLogit {
            let ids: Vec<String> = out.targets.iter().map(|t| t.to_string()).collect();
            meta.push(("targets", ids.join(";")));
        }
        if let Some(m) = selected_by {
            meta.push(("selected_by", m.to_string()));
        }
        write_matrix(&path, c, &tokens, &meta)?;
        written.push(path);
        if a.image {
            let png = a.out.join(format!("{stem}.png"));
            heatmap::save(&png, c.scores.view())?;
            written.push(png);
        }
    }
    Ok(written)
}

/// For each per-layer method, the layer whose copy block scores best; ties
/// go to the lowest layer. Cross-layer matrices pass through.
fn best_layers(matrices: &[AttributionMatrix], s: usize, metric: Metric) -> CliResult<Vec<&AttributionMatrix>> {
    let gold = gold_mask(s);
    let mut best: Vec<(Method, f64, &AttributionMatrix)> = Vec::new();
    let mut passthrough = Vec::new();
    for c in matrices {
        if c.layer == LayerTag::Aggregated {
            passthrough.push(c);
            continue;
        }
        let score = score_block(extract_copy_block(c, s)?.view(), &gold)?.get(metric);
        match best.iter_mut().find(|(m, _, _)| *m == c.method) {
            Some(entry) if score > entry.1 => *entry = (c.method, score, c),
            Some(_) => {}
            None => best.push((c.method, score, c)),
        }
    }
    Ok(best.into_iter().map(|(_, _, c)| c).chain(passthrough).collect())
}

pub fn run(a: &DecomposeArgs) -> CliResult<()> {
    let methods: Vec<Method> = parse_list(&a.methods)?;
    let layer = LayerArg::parse(&a.layer)?;
    layer.check(&methods)?;
    parse_strategy(&a.strategy)?;
    let model = LoadedModel::load(&a.bundle)?;
    let plan = Plan { args: a, methods, layer };
    let written = dispatch!(&model, decompose_typed(&plan))?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
