// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};

use biasheads::bias::{classify_heads, head_bias_scores, BiasScoreMap, BiasScoreOptions, GradientMode, MissingWordPolicy, WordSets};
use biasheads::corpus::Corpus;
use biasheads::debias::{apply_strategy, evaluate, perplexity, MaskStrategy};
use biasheads::lab::{attention_edges, run_counter_stereotype, GroupAggregation, LabOptions};
use biasheads::model::tokenizer::{Merges, Tokenizer, TokenizerConfig, TokenizerMode, Vocab};
use biasheads::model::{Architecture, Model};
use biasheads::report;
use biasheads::Scalar;
use serde_json::json;

use crate::failure::Failure;
use crate::options::{required, BiasScoresArgs, Common, CounterArgs, DebiasArgs, ExportArgs, PpplArgs};
use crate::output::Run;

/// Everything loaded from the common flags.
struct Inputs<T> {
    model: Model<T>,
    tokenizer: Tokenizer,
    out: PathBuf,
    seed: u64,
    missing: MissingWordPolicy,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Precision {
    F32,
    F64,
}

fn precision(common: &Common) -> Result<Precision, Failure> {
    match common.precision.as_deref().unwrap_or("f32") {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(Failure::input(format!("unknown precision `{other}`"))),
    }
}

fn parse<T: std::str::FromStr<Err = biasheads::Error>>(s: &str) -> Result<T, Failure> {
    Ok(s.parse()?)
}

fn load<T: Scalar>(common: &Common, run: &mut Run) -> Result<Inputs<T>, Failure> {
    let model_path = required(&common.model, "model")?;
    let vocab_path = required(&common.vocab, "vocab")?;
    let out = required(&common.out, "out")?.clone();
    let model = Model::load(model_path)?;
    if let Some(arch) = &common.arch {
        let expected: Architecture = parse(arch)?;
        if expected != model.config.architecture {
            return Err(Failure::input(format!(
                "--arch {arch} but {} holds a {} model",
                model_path.display(),
                model.config.architecture
            )));
        }
    }
    let mode = match &common.tokenizer {
        Some(m) => parse(m)?,
        None if model.config.architecture == Architecture::Decoder => TokenizerMode::ByteBpe,
        None => TokenizerMode::WordPiece,
    };
    let merges = common.merges.as_deref().map(Merges::from_file).transpose()?;
    let vocab = Vocab::from_file(vocab_path)?;
    if vocab.len() != model.config.vocab_size {
        return Err(Failure::input(format!(
            "{} has {} tokens, model expects {}",
            vocab_path.display(),
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let tokenizer = Tokenizer::new(vocab, merges, TokenizerConfig::for_model(&model.config, mode))?;
    run.input("model", model_path);
    run.input("vocab", vocab_path);
    if let Some(m) = &common.merges {
        run.input("merges", m);
    }
    let missing = if common.skip_missing.unwrap_or(false) {
        MissingWordPolicy::Skip
    } else {
        MissingWordPolicy::Error
    };
    run.setting("architecture", model.config.architecture.as_str());
    run.setting("tokenizer", format!("{mode:?}").to_lowercase());
    run.setting("skip-missing", missing == MissingWordPolicy::Skip);
    run.setting("precision", common.precision.clone().unwrap_or_else(|| "f32".into()));
    Ok(Inputs {
        model: model.cast(),
        tokenizer,
        out,
        seed: common.seed.unwrap_or(0),
        missing,
    })
}

fn wordlists(common: &Common, run: &mut Run) -> Result<WordSets, Failure> {
    let path = required(&common.wordlists, "wordlists")?;
    run.input("wordlists", path);
    Ok(WordSets::from_path(path)?)
}

fn corpus(path: &Path, role: &'static str, run: &mut Run) -> Result<Corpus, Failure> {
    run.input(role, path);
    Ok(Corpus::from_file(path)?)
}

fn bias_map(path: &Option<PathBuf>, run: &mut Run) -> Result<BiasScoreMap<f64>, Failure> {
    let path = required(path, "bias-csv")?;
    run.input("bias-csv", path);
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    report::parse_bias_scores_csv(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn cast_map<T: Scalar>(map: &BiasScoreMap<f64>, layers: usize, heads: usize) -> Result<BiasScoreMap<T>, Failure> {
    if (map.layers, map.heads) != (layers, heads) {
        return Err(Failure::input(format!(
            "bias scores cover {}x{} heads, model has {layers}x{heads}",
            map.layers, map.heads
        )));
    }
    Ok(BiasScoreMap::new(layers, heads, map.scores.iter().map(|&s| T::lit(s)).collect())?)
}

fn finish(run: Run, out: &Path) -> Result<(), Failure> {
    for path in run.commit(out)? {
        println!("{}", path.display());
    }
    Ok(())
}

macro_rules! dispatch {
    ($common:expr, $f:ident ( $($arg:expr),* )) => {
        match precision(&$common)? {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub fn bias_scores(common: Common, args: BiasScoresArgs, config: Option<PathBuf>) -> Result<(), Failure> {
    dispatch!(common, bias_scores_with(&common, &args, config))
}

fn bias_scores_with<T: Scalar>(common: &Common, args: &BiasScoresArgs, config: Option<PathBuf>) -> Result<(), Failure> {
    let mut run = Run::new("bias-scores", config, common.seed.unwrap_or(0));
    let inputs = load::<T>(common, &mut run)?;
    let sets = wordlists(common, &mut run)?;
    let corpus = corpus(required(&common.corpus, "corpus")?, "corpus", &mut run)?;
    let mode = match args.mode.as_deref().unwrap_or("chunked") {
        "chunked" => GradientMode::Chunked,
        "single-graph" => GradientMode::SingleGraph,
        other => return Err(Failure::input(format!("unknown gradient mode `{other}`"))),
    };
    run.setting("mode", args.mode.clone().unwrap_or_else(|| "chunked".into()));
    let options = BiasScoreOptions {
        mode,
        missing: inputs.missing,
    };
    let result = head_bias_scores(&inputs.model, &inputs.tokenizer, &sets, &corpus, options)?;
    let partition = classify_heads(&result.scores);
    run.output("bias_scores.csv", report::bias_scores_csv(&result.scores));
    run.output("bias_histogram.csv", report::histogram_csv(&result.scores));
    run.output("bias_heatmap.svg", report::heatmap_svg(&result.scores));
    run.json("partition.json", &report::partition_json(&partition));
    run.json(
        "seat.json",
        &json!({
            "seat": result.seat.to_f64_lossless(),
            "sentences": result.sentences,
            "targets_x": result.sets.x,
            "targets_y": result.sets.y,
            "attributes_a": result.sets.a,
            "attributes_b": result.sets.b,
        }),
    );
    finish(run, &inputs.out)
}

pub fn counter_stereotype(common: Common, args: CounterArgs, config: Option<PathBuf>) -> Result<(), Failure> {
    dispatch!(common, counter_with(&common, &args, config))
}

fn edge_head(spec: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::input(format!("--edge-head expects LAYER-HEAD, got `{spec}`"));
    let (l, h) = spec.split_once('-').ok_or_else(bad)?;
    let l: usize = l.parse().map_err(|_| bad())?;
    let h: usize = h.parse().map_err(|_| bad())?;
    if l == 0 || h == 0 {
        return Err(bad());
    }
    Ok((l - 1, h - 1))
}

fn counter_with<T: Scalar>(common: &Common, args: &CounterArgs, config: Option<PathBuf>) -> Result<(), Failure> {
    let mut run = Run::new("counter-stereotype", config, common.seed.unwrap_or(0));
    let inputs = load::<T>(common, &mut run)?;
    let sets = wordlists(common, &mut run)?;
    let corpus = corpus(required(&common.corpus, "corpus")?, "corpus", &mut run)?;
    let c = &inputs.model.config;
    let scores = cast_map::<f64>(&bias_map(&args.bias_csv, &mut run)?, c.num_layers, c.num_heads)?;
    let partition = classify_heads(&scores);
    let aggregation: GroupAggregation = parse(args.aggregation.as_deref().unwrap_or("sentence-mean"))?;
    let options = LabOptions {
        pairs: args.pairs.unwrap_or(LabOptions::default().pairs),
        seed: inputs.seed,
        aggregation,
    };
    run.setting("pairs", options.pairs);
    run.setting("aggregation", args.aggregation.clone().unwrap_or_else(|| "sentence-mean".into()));
    let lab = run_counter_stereotype(&inputs.model, &inputs.tokenizer, &sets, &corpus, &partition, options)?;

    let example = args.example.unwrap_or(0);
    let pair = lab
        .pairs
        .get(example)
        .ok_or_else(|| Failure::input(format!("--example {example} but only {} pairs", lab.pairs.len())))?;
    let (layer, head) = match &args.edge_head {
        Some(s) => edge_head(s)?,
        None => partition
            .biased
            .first()
            .or(partition.regular.first())
            .copied()
            .expect("a model has at least one head"),
    };
    run.setting("example", example);
    run.setting("edge-head", format!("{}-{}", layer + 1, head + 1));
    let original = attention_edges(&inputs.model, &inputs.tokenizer, &pair.original, &pair.target_bytes, layer, head)?;
    let counter = attention_edges(&inputs.model, &inputs.tokenizer, &pair.counter, &pair.counter_target_bytes, layer, head)?;

    run.json("ttest.json", &report::lab_report_json(&lab));
    run.output("head_samples.csv", report::lab_samples_csv(&lab));
    run.output("pairs.csv", report::pairs_csv(&lab));
    run.output("attention_edges_original.csv", report::attention_edges_csv(&original));
    run.output("attention_edges_counter.csv", report::attention_edges_csv(&counter));
    run.output("group_bars.svg", report::group_bars_svg(&lab));
    finish(run, &inputs.out)
}

fn strategies(list: &str, seed: u64) -> Result<Vec<MaskStrategy>, Failure> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| Ok(MaskStrategy::parse(s, seed)?))
        .collect()
}

pub fn debias_eval(common: Common, args: DebiasArgs, config: Option<PathBuf>) -> Result<(), Failure> {
    dispatch!(common, debias_with(&common, &args, config))
}

fn debias_with<T: Scalar>(common: &Common, args: &DebiasArgs, config: Option<PathBuf>) -> Result<(), Failure> {
    let mut run = Run::new("debias-eval", config, common.seed.unwrap_or(0));
    let inputs = load::<T>(common, &mut run)?;
    let sets = wordlists(common, &mut run)?;
    let seat_corpus = corpus(required(&common.corpus, "corpus")?, "corpus", &mut run)?;
    let lm_corpus = match &args.lm_corpus {
        Some(p) => corpus(p, "lm-corpus", &mut run)?,
        None => seat_corpus.clone(),
    };
    let c = &inputs.model.config;
    let scores = cast_map::<T>(&bias_map(&args.bias_csv, &mut run)?, c.num_layers, c.num_heads)?;
    let list = args.strategies.clone().unwrap_or_default();
    let strategies = strategies(&list, inputs.seed)?;
    run.setting("strategies", list);
    let rows = evaluate(
        &inputs.model,
        &inputs.tokenizer,
        &sets,
        &seat_corpus,
        &lm_corpus,
        &scores,
        &strategies,
        inputs.missing,
    )?;
    run.json("eval.json", &report::eval_json(&rows));
    run.output("eval_table.txt", report::eval_table(&rows));
    finish(run, &inputs.out)
}

pub fn pppl(common: Common, args: PpplArgs, config: Option<PathBuf>) -> Result<(), Failure> {
    dispatch!(common, pppl_with(&common, &args, config))
}

fn pppl_with<T: Scalar>(common: &Common, args: &PpplArgs, config: Option<PathBuf>) -> Result<(), Failure> {
    let mut run = Run::new("pppl", config, common.seed.unwrap_or(0));
    let inputs = load::<T>(common, &mut run)?;
    let corpus = corpus(required(&common.corpus, "corpus")?, "corpus", &mut run)?;
    let strategy = MaskStrategy::parse(args.strategy.as_deref().unwrap_or("baseline"), inputs.seed)?;
    let grid = if strategy == MaskStrategy::Baseline {
        None
    } else {
        let c = &inputs.model.config;
        let scores = cast_map::<T>(&bias_map(&args.bias_csv, &mut run)?, c.num_layers, c.num_heads)?;
        Some(apply_strategy(&scores, strategy)?)
    };
    run.setting("strategy", strategy.to_string());
    let p = perplexity(&inputs.model, &inputs.tokenizer, grid.as_ref(), &corpus)?;
    let metric = if inputs.model.is_causal() { "ppl" } else { "pppl" };
    run.json(
        "pppl.json",
        &json!({
            "metric": metric,
            "strategy": strategy.to_string(),
            "masked": grid.map(|g| g.masked_heads().iter().map(|&(l, h)| format!("{}-{}", l + 1, h + 1)).collect::<Vec<_>>()).unwrap_or_default(),
            "value": p.value,
            "tokens": p.tokens,
        }),
    );
    finish(run, &inputs.out)
}

pub fn export_figures(common: Common, args: ExportArgs, config: Option<PathBuf>) -> Result<(), Failure> {
    let mut run = Run::new("export-figures", config, common.seed.unwrap_or(0));
    let out = required(&common.out, "out")?.clone();
    let scores = bias_map(&args.bias_csv, &mut run)?;
    run.output("bias_histogram.csv", report::histogram_csv(&scores));
    run.output("bias_heatmap.svg", report::heatmap_svg(&scores));
    finish(run, &out)
}
