use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dynhdp::anomaly::{
    format_labels, format_roc, format_scores, labeled_scores, parse_labels, parse_scores, roc_auc, score_corpus,
};
use dynhdp::corpus::{format_corpus, parse_corpus};
use dynhdp::features::{extract_corpus, load_frames, FeatureConfig};
use dynhdp::inference::{batch_train, format_snapshot, parse_snapshot, DynamicConditional, GibbsConfig};
use dynhdp::synthetic::{format_truth, generate_bars, parse_truth, true_model_score, BarsSpec};
use dynhdp::{Corpus, CorpusFormat, HyperParams, Label, Mode};

use crate::config::{
    parse_opt, required, ConfigFile, EvalOpts, ExtractOpts, HyperOpts, ScoreOpts, SynthOpts, TrainOpts,
    TruthScoreOpts,
};
use crate::manifest::Manifest;
use crate::svg::roc_svg;
use crate::{Cli, CliError, Command, EXIT_EVALUATION};

/// Settings every subcommand shares.
struct Global {
    seed: u64,
    out_dir: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let global = Global {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out_dir: cli.out_dir.or(file.out_dir).unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&global.out_dir)
        .map_err(|e| CliError::input(format!("{}: {e}", global.out_dir.display())))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads.or(file.threads) {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::input(format!("cannot start thread pool: {e}")))?;

    pool.install(|| match cli.command {
        Command::Synth(opts) => synth(&global, opts.or(file.synth)),
        Command::Train { opts, hyper } => train(&global, opts.or(file.train), hyper.or(file.hyper)),
        Command::Score { opts, no_update } => score(&global, opts.or(file.score), no_update),
        Command::Eval(opts) => eval(&global, opts.or(file.eval)),
        Command::Extract(opts) => extract(&global, opts.or(file.extract)),
        Command::TruthScore(opts) => truth_score(&global, opts.or(file.truth_score)),
    })
}

fn start(command: &str, global: &Global) -> Result<Manifest, CliError> {
    #[derive(serde::Serialize)]
    struct Seed {
        seed: u64,
    }
    let mut m = Manifest::new(command, &global.out_dir);
    m.options(&Seed { seed: global.seed })?;
    Ok(m)
}

fn in_file(path: &Path) -> impl Fn(dynhdp::Error) -> CliError + '_ {
    move |e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    }
}

fn read_text(m: &mut Manifest, path: &Path) -> Result<String, CliError> {
    let bytes = m.read_input(path)?;
    String::from_utf8(bytes).map_err(|_| CliError::input(format!("{}: not UTF-8 text", path.display())))
}

fn read_corpus(m: &mut Manifest, path: &Path, format: CorpusFormat) -> Result<Corpus, CliError> {
    let text = read_text(m, path)?;
    parse_corpus(&text, format).map_err(in_file(path))
}

fn finish(m: Manifest) -> Result<(), CliError> {
    let path = m.finish()?;
    println!("manifest: {}", path.display());
    Ok(())
}

fn synth(global: &Global, o: SynthOpts) -> Result<(), CliError> {
    let spec_default = BarsSpec::default();
    let gen_default = BarsSpec::default_hyper();
    let o = o.or(SynthOpts {
        grid: Some(spec_default.grid),
        train_docs: Some(spec_default.train_docs),
        test_docs: Some(spec_default.test_docs),
        min_len: Some(spec_default.doc_len.0),
        max_len: Some(spec_default.doc_len.1),
        abnormal_fraction: Some(spec_default.abnormal_fraction),
        mode: Some(spec_default.mode.to_string()),
        gen_alpha: Some(gen_default.alpha),
        gen_gamma: Some(gen_default.gamma),
        gen_delta: Some(gen_default.delta),
    });
    let spec = BarsSpec {
        grid: o.grid.unwrap_or_default(),
        train_docs: o.train_docs.unwrap_or_default(),
        test_docs: o.test_docs.unwrap_or_default(),
        doc_len: (o.min_len.unwrap_or_default(), o.max_len.unwrap_or_default()),
        abnormal_fraction: o.abnormal_fraction.unwrap_or_default(),
        abnormal_positions: None,
        mode: parse_opt(o.mode.as_deref(), Mode::Dynamic)?,
    };
    let hyper = HyperParams {
        alpha: o.gen_alpha.unwrap_or_default(),
        gamma: o.gen_gamma.unwrap_or_default(),
        delta: o.gen_delta.unwrap_or_default(),
        eta: gen_default.eta,
    };
    let mut m = start("synth", global)?;
    m.options(&o)?;

    let mut rng = ChaCha8Rng::seed_from_u64(global.seed);
    let data = generate_bars(&spec, &hyper, &mut rng)?;
    let labels: Vec<(usize, Label)> = data.test.documents().iter().map(|d| (d.index, d.label)).collect();
    let abnormal = labels.iter().filter(|l| l.1 == Label::Abnormal).count();

    m.write_output("train.corpus", format_corpus(&data.train).as_bytes())?;
    m.write_output("test.corpus", format_corpus(&data.test).as_bytes())?;
    m.write_output("truth.txt", format_truth(&data.truth).as_bytes())?;
    m.write_output("labels.csv", format_labels(&labels).as_bytes())?;
    m.result("abnormal_test_docs", abnormal);
    println!(
        "bars corpus: V={} train={} test={} abnormal={abnormal}",
        spec.vocab_size(),
        data.train.len(),
        data.test.len()
    );
    finish(m)
}

fn train(global: &Global, o: TrainOpts, h: HyperOpts) -> Result<(), CliError> {
    let defaults = GibbsConfig::batch(Mode::Dynamic, global.seed);
    let o = o.or(TrainOpts {
        corpus: None,
        format: Some("token-list".into()),
        mode: Some(Mode::Dynamic.to_string()),
        conditional: Some("exact".into()),
        sweeps: Some(defaults.sweeps),
        burn_in: Some(defaults.burn_in),
        sample_lag: Some(defaults.sample_lag),
        chains: Some(defaults.chains),
    });
    let hd = HyperParams::default();
    let h = h.or(HyperOpts {
        alpha: Some(hd.alpha),
        gamma: Some(hd.gamma),
        delta: Some(hd.delta),
        eta: Some(hd.eta),
    });
    let corpus_path = required(o.corpus.clone(), "corpus")?;
    let format: CorpusFormat = parse_opt(o.format.as_deref(), CorpusFormat::TokenList)?;
    let mode: Mode = parse_opt(o.mode.as_deref(), Mode::Dynamic)?;
    let cfg = GibbsConfig {
        sweeps: o.sweeps.unwrap_or_default(),
        burn_in: o.burn_in.unwrap_or_default(),
        sample_lag: o.sample_lag.unwrap_or_default(),
        chains: o.chains.unwrap_or_default(),
        seed: global.seed,
        mode,
        conditional: parse_opt(o.conditional.as_deref(), DynamicConditional::Exact)?,
    };
    let hyper = HyperParams {
        alpha: h.alpha.unwrap_or_default(),
        gamma: h.gamma.unwrap_or_default(),
        delta: h.delta.unwrap_or_default(),
        eta: h.eta.unwrap_or_default(),
    };
    let mut m = start("train", global)?;
    m.options(&o)?;
    m.options(&h)?;

    let corpus = read_corpus(&mut m, &corpus_path, format)?;
    let (snapshot, _) = batch_train(&corpus, &hyper, &cfg)?;
    m.write_output("model.snapshot", format_snapshot(&snapshot).as_bytes())?;
    m.result("topics", snapshot.num_topics());
    println!(
        "trained {mode} model: {} documents, {} topics",
        corpus.len(),
        snapshot.num_topics()
    );
    finish(m)
}

fn score(global: &Global, o: ScoreOpts, no_update: bool) -> Result<(), CliError> {
    let defaults = GibbsConfig::online(Mode::Dynamic, global.seed);
    let o = o.or(ScoreOpts {
        snapshot: None,
        corpus: None,
        format: Some("token-list".into()),
        sweeps: Some(defaults.sweeps),
        burn_in: Some(defaults.burn_in),
        sample_lag: Some(defaults.sample_lag),
    });
    let snapshot_path = required(o.snapshot.clone(), "snapshot")?;
    let corpus_path = required(o.corpus.clone(), "corpus")?;
    let format: CorpusFormat = parse_opt(o.format.as_deref(), CorpusFormat::TokenList)?;
    let mut m = start("score", global)?;
    m.options(&o)?;
    if no_update {
        m.flag("no-update");
    }

    let text = read_text(&mut m, &snapshot_path)?;
    let mut snapshot = parse_snapshot(&text).map_err(in_file(&snapshot_path))?;
    let corpus = read_corpus(&mut m, &corpus_path, format)?;
    let cfg = GibbsConfig {
        sweeps: o.sweeps.unwrap_or_default(),
        burn_in: o.burn_in.unwrap_or_default(),
        sample_lag: o.sample_lag.unwrap_or_default(),
        mode: snapshot.mode,
        ..defaults
    };
    let results = score_corpus(&mut snapshot, &corpus, &cfg, !no_update)?;
    m.write_output("scores.csv", format_scores(&results).as_bytes())?;
    if !no_update {
        m.write_output("model.updated.snapshot", format_snapshot(&snapshot).as_bytes())?;
    }
    let defined = results.iter().filter(|r| r.defined).count();
    m.result("documents", results.len());
    m.result("defined", defined);
    println!("scored {} documents ({defined} non-empty)", results.len());
    finish(m)
}

fn eval(global: &Global, o: EvalOpts) -> Result<(), CliError> {
    let scores_path = required(o.scores.clone(), "scores")?;
    let mut m = start("eval", global)?;
    m.options(&o)?;
    let text = read_text(&mut m, &scores_path)?;
    let mut results = parse_scores(&text).map_err(in_file(&scores_path))?;

    if let Some(labels_path) = &o.labels {
        let text = read_text(&mut m, labels_path)?;
        let labels = parse_labels(&text).map_err(in_file(labels_path))?;
        let position: BTreeMap<usize, usize> = results.iter().enumerate().map(|(i, r)| (r.doc_index, i)).collect();
        for r in &mut results {
            r.label = Label::Unlabeled;
        }
        for (j, label) in labels {
            let i = position.get(&j).ok_or_else(|| {
                CliError::input(format!(
                    "{}: label for unknown doc_index {j}",
                    labels_path.display()
                ))
            })?;
            results[*i].label = label;
        }
    }

    let curve = roc_auc(&labeled_scores(&results)).map_err(|e| CliError {
        code: EXIT_EVALUATION,
        message: e.to_string(),
    })?;
    m.write_output("roc.csv", format_roc(&curve).as_bytes())?;
    m.write_output("roc.svg", roc_svg(&curve).as_bytes())?;
    m.result("auc", curve.auc);
    println!("AUC {:.4}", curve.auc);
    finish(m)
}

fn extract(global: &Global, o: ExtractOpts) -> Result<(), CliError> {
    let d = FeatureConfig::default();
    let o = o.or(ExtractOpts {
        frames: None,
        cell_size: Some(d.cell_size),
        threshold: Some(d.magnitude_threshold),
        clip_length: Some(d.clip_length),
        smoothness: Some(d.smoothness),
        iterations: Some(d.iterations),
    });
    let dir = required(o.frames.clone(), "frames")?;
    let cfg = FeatureConfig {
        cell_size: o.cell_size.unwrap_or_default(),
        magnitude_threshold: o.threshold.unwrap_or_default(),
        clip_length: o.clip_length.unwrap_or_default(),
        smoothness: o.smoothness.unwrap_or_default(),
        iterations: o.iterations.unwrap_or_default(),
    };
    let mut m = start("extract", global)?;
    m.options(&o)?;

    let frames = load_frames(&dir)?;
    for (path, _) in &frames {
        let bytes = std::fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        m.note_input(path, &bytes);
    }
    let frames: Vec<_> = frames.into_iter().map(|(_, f)| f).collect();
    let extracted = extract_corpus(&frames, &cfg)?;
    let corpus = &extracted.corpus;
    m.write_output("frames.corpus", format_corpus(corpus).as_bytes())?;
    m.result("documents", corpus.len());
    m.result("tokens", corpus.total_tokens());
    m.result("partial_last_clip", extracted.partial_last);
    println!(
        "extracted {} documents, {} words, V={}{}",
        corpus.len(),
        corpus.total_tokens(),
        corpus.vocab_size(),
        if extracted.partial_last {
            " (last clip is partial)"
        } else {
            ""
        }
    );
    finish(m)
}

fn truth_score(global: &Global, o: TruthScoreOpts) -> Result<(), CliError> {
    let truth_path = required(o.truth.clone(), "truth")?;
    let corpus_path = required(o.corpus.clone(), "corpus")?;
    let mut m = start("truth-score", global)?;
    let text = read_text(&mut m, &truth_path)?;
    let truth = parse_truth(&text).map_err(in_file(&truth_path))?;
    let o = o.or(TruthScoreOpts {
        offset: Some(truth.train_docs),
        ..Default::default()
    });
    m.options(&o)?;
    let corpus = read_corpus(&mut m, &corpus_path, CorpusFormat::TokenList)?;
    let results = true_model_score(&truth, &corpus, o.offset.unwrap_or_default())?;
    m.write_output("truth-scores.csv", format_scores(&results).as_bytes())?;
    m.result("documents", results.len());
    println!("scored {} documents under the true model", results.len());
    finish(m)
}
