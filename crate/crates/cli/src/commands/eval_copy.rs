use latim_core::aggregation::{AttributionMatrix, LayerTag, Method};
use latim_core::attribute::{AttributionRequest, LayerSelection};
use latim_core::eval::{
    evaluate_copy, extract_copy_block, gen_copy_batch, gold_mask, score_block, FaithfulnessReport, SampleScores,
    PROTOCOL,
};
use latim_core::{ModelConfig, ModelWeights, Real};

use super::{dispatch, ensure_dir, materialize, parse_list, parse_strategy, text_table, LayerArg, LoadedModel};
use crate::args::EvalCopyArgs;
use crate::csv_io::{format_value, read_matrix, write_table};
use crate::error::{CliError, CliResult};

fn eval_typed<T: Real>(
    weights: &ModelWeights<T>,
    config: &ModelConfig,
    a: &EvalCopyArgs,
    request: &AttributionRequest,
) -> CliResult<Vec<FaithfulnessReport>> {
    let batch = gen_copy_batch(a.count, a.copy_len, config.vocab_size, a.seed)?;
    Ok(evaluate_copy(weights, config, &batch, request)?)
}

fn from_csv(a: &EvalCopyArgs) -> CliResult<Vec<FaithfulnessReport>> {
    let path = a.scores_from_csv.as_ref().expect("checked by caller");
    let parsed = read_matrix(path)?;
    let n = parsed.tokens.len();
    if n < 3 || n % 2 == 0 {
        return Err(CliError::Data(format!("copy-task matrix must be (2S+1)x(2S+1), got {n}x{n}")));
    }
    let s = (n - 1) / 2;
    let method = parsed.meta.get("method").and_then(|m| m.parse().ok()).unwrap_or(Method::Alti);
    let layer = match parsed.meta.get("layer").map(String::as_str) {
        Some("aggregated") => LayerTag::Aggregated,
        Some(l) => l.parse().map(LayerTag::Layer).unwrap_or(LayerTag::Aggregated),
        None => LayerTag::Aggregated,
    };
    let c = AttributionMatrix::new(parsed.scores, method, layer);
    let scores = score_block(extract_copy_block(&c, s)?.view(), &gold_mask(s))?;
    Ok(vec![FaithfulnessReport {
        method,
        layer,
        mean: scores,
        samples: vec![SampleScores { sample: 0, scores }],
    }])
}

pub fn run(a: &EvalCopyArgs) -> CliResult<()> {
    let reports = if a.scores_from_csv.is_some() {
        from_csv(a)?
    } else {
        let bundle = a
            .bundle
            .as_ref()
            .ok_or_else(|| CliError::Usage("eval-copy needs --bundle or --scores-from-csv".into()))?;
        let methods: Vec<Method> = parse_list(&a.methods)?;
        let layer = LayerArg::parse(&a.layer)?;
        layer.check(&methods)?;
        let mut request = AttributionRequest::new(methods);
        request.strategy = parse_strategy(&a.strategy)?;
        request.layers = match layer {
            LayerArg::All => LayerSelection::All,
            LayerArg::Aggregated => LayerSelection::Layers(vec![]),
            LayerArg::Index(l) => LayerSelection::Layers(vec![l]),
            LayerArg::BestBy(_) => return Err(CliError::Usage("eval-copy reports every layer; best-by is for decompose".into())),
        };
        request.materialize = materialize(2 * a.copy_len + 1, a.stream)?;
        let model = LoadedModel::load(bundle)?;
        dispatch!(&model, eval_typed(a, &request))?
    };
    write_reports(a, &reports)
}

fn write_reports(a: &EvalCopyArgs, reports: &[FaithfulnessReport]) -> CliResult<()> {
    ensure_dir(&a.out)?;
    let meta = [
        ("protocol", PROTOCOL.to_string()),
        ("copy_len", a.copy_len.to_string()),
        ("count", a.count.to_string()),
        ("seed", a.seed.to_string()),
        ("strategy", a.strategy.clone()),
    ];
    let meta: &[(&str, String)] = if a.scores_from_csv.is_some() { &meta[..1] } else { &meta };
    let header: Vec<String> = ["method", "layer", "auc", "ap", "r@k", "samples"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.method.to_string(),
                r.layer.to_string(),
                format_value(r.mean.auc),
                format_value(r.mean.ap),
                format_value(r.mean.r_at_k),
                r.samples.len().to_string(),
            ]
        })
        .collect();
    write_table(&a.out.join("report.csv"), meta, &header, &rows)?;

    let sample_header: Vec<String> = ["method", "layer", "sample", "auc", "ap", "r@k"].map(String::from).to_vec();
    let sample_rows: Vec<Vec<String>> = reports
        .iter()
        .flat_map(|r| {
            r.samples.iter().map(move |s| {
                vec![
                    r.method.to_string(),
                    r.layer.to_string(),
                    s.sample.to_string(),
                    format_value(s.scores.auc),
                    format_value(s.scores.ap),
                    format_value(s.scores.r_at_k),
                ]
            })
        })
        .collect();
    write_table(&a.out.join("samples.csv"), meta, &sample_header, &sample_rows)?;

    let pretty: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.method.to_string(),
                r.layer.to_string(),
                format!("{:.4}", r.mean.auc),
                format!("{:.4}", r.mean.ap),
                format!("{:.4}", r.mean.r_at_k),
                r.samples.len().to_string(),
            ]
        })
        .collect();
    let text = format!("# {PROTOCOL}\n{}", text_table(&header, &pretty));
    let path = a.out.join("report.txt");
    std::fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
    print!("{text}");
    Ok(())
}
