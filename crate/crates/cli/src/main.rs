use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use doctrans_core::detector::{
    binarize_mask, predict_mask, train_detector_from_manifest, DetectorTrainConfig, EpochStats, UNet, UNetConfig,
};
use doctrans_core::metrics::{evaluate_corpus, read_aligned_files, read_pairs_csv, EvalOptions};
use doctrans_core::nmtdata::synthetic::{ToyGrammar, ToyGrammarConfig};
use doctrans_core::nmtdata::{
    build_vocabularies, load_parallel_corpus, write_parallel_corpus, CorpusOptions, ParallelPair, VocabOptions,
};
use doctrans_core::ocr::{build_recognizer, EngineKind, RecognizerSpec};
use doctrans_core::pipeline::{
    evaluate_end_to_end, mask_to_boxes, translate_text, Pipeline, PipelineConfig, TextTranslator,
};
use doctrans_core::regions::boxes_to_json;
use doctrans_core::synthgen::{generate_dataset, load_manifest, SynthConfig};
use doctrans_core::transformer::{
    encode_corpus, run_data_ablation, train_translator, write_ablation_csv, AblationOptions, NmtTrainConfig,
    Translator, TransformerConfig, VocabRef,
};
use doctrans_core::{Error, Language, Result};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  invalid command-line usage
  3  configuration error (bad values, missing referenced files)
  4  input error (unreadable or malformed file, invalid data)
  5  recognition engine or font unavailable
  6  training aborted (non-finite loss)
  7  a pipeline stage failed";

#[derive(Parser)]
#[command(name = "doctrans", version, about = "Detect, recognize and translate text in document images", after_help = EXIT_CODES)]
struct Cli {
    /// JSON configuration file for the chosen command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation, splits and initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic text-image dataset or write a toy parallel corpus.
    GenData(GenData),
    /// Train the U-Net text detector on a generated dataset.
    TrainDetector(TrainDetector),
    /// Train the Transformer on a parallel-corpus CSV.
    TrainTranslator(TrainTranslator),
    /// Validation loss against training-set size.
    Ablate(Ablate),
    /// Print detected word boxes for an image as JSON.
    Detect { image: PathBuf },
    /// Translate a sentence (from --text or stdin).
    TranslateText(TranslateText),
    /// Run the full pipeline on an image and print the result as JSON.
    TranslateImage {
        image: PathBuf,
        /// Only run detection and print the regions.
        #[arg(long)]
        boxes_only: bool,
    },
    /// Score translations, or a whole dataset end to end.
    Evaluate(Evaluate),
    /// Check that the recognition engine runs.
    OcrHealth(OcrHealth),
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Images,
    Corpus,
}

#[derive(Args)]
struct GenData {
    #[arg(long, value_enum, default_value = "images")]
    kind: DataKind,
    /// Images to render, or pairs per direction for a corpus.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Directory with `fonts/` and `wordlists/`.
    #[arg(long, default_value = "assets")]
    assets: PathBuf,
    /// Comma-separated language codes for images.
    #[arg(long, value_delimiter = ',')]
    languages: Vec<Language>,
    /// Square canvas side for images; unset sizes each image to its text.
    #[arg(long)]
    canvas: Option<u32>,
    #[arg(long)]
    max_words: Option<usize>,
    /// Corpus directions such as `en-fr,en-de`.
    #[arg(long, value_delimiter = ',', default_value = "en-fr,en-de")]
    directions: Vec<String>,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DetectorJob {
    unet: UNetConfig,
    train: DetectorTrainConfig,
}

#[derive(Args)]
struct TrainDetector {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    batch: Option<usize>,
    /// Square input side.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    base: Option<usize>,
    #[arg(long)]
    dropout: Option<f32>,
    #[arg(long)]
    no_augment: bool,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TranslatorJob {
    model: TransformerConfig,
    train: NmtTrainConfig,
    vocab: VocabOptions,
    max_seq_len: Option<usize>,
    normalize: bool,
}

#[derive(Args)]
struct NmtOverrides {
    /// Desk-scale model (width 64, 2+2 layers, 4 heads).
    #[arg(long)]
    tiny: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    min_freq: Option<usize>,
}

#[derive(Args)]
struct TrainTranslator {
    /// CSV with source_text,target_text,source_language,target_language.
    #[arg(long)]
    corpus: PathBuf,
    /// Validation CSV; a seeded split of the corpus otherwise.
    #[arg(long)]
    val: Option<PathBuf>,
    #[command(flatten)]
    nmt: NmtOverrides,
}

#[derive(Args)]
struct Ablate {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    heldout: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "100,1000,5000")]
    sizes: Vec<usize>,
    #[command(flatten)]
    nmt: NmtOverrides,
}

#[derive(Args)]
struct TranslateText {
    #[arg(long)]
    text: Option<String>,
    #[arg(long)]
    from: Option<Language>,
    #[arg(long)]
    to: Option<Language>,
    /// Translator checkpoint; taken from --config when absent.
    #[arg(long, requires_all = ["src_vocab", "tgt_vocab"])]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    src_vocab: Option<PathBuf>,
    #[arg(long)]
    tgt_vocab: Option<PathBuf>,
}

#[derive(Args)]
struct Evaluate {
    #[arg(long, requires = "refs")]
    hyps: Option<PathBuf>,
    #[arg(long)]
    refs: Option<PathBuf>,
    /// CSV with hypothesis and reference columns.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Dataset directory for an end-to-end run (needs --config and --references).
    #[arg(long, requires = "references")]
    data: Option<PathBuf>,
    /// One reference translation per dataset record, in manifest order.
    #[arg(long)]
    references: Option<PathBuf>,
    /// Include per-order precisions and the brevity penalty.
    #[arg(long)]
    debug: bool,
}

#[derive(Args)]
struct OcrHealth {
    #[arg(long, value_enum)]
    engine: Option<Engine>,
    #[arg(long)]
    mock_table: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Engine {
    External,
    Mock,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::Validation(_) | Error::Format { .. } | Error::Io { .. } | Error::Image(_) | Error::Json(_) | Error::Csv(_) => 4,
        Error::Font(_) | Error::Engine(_) => 5,
        Error::Training(_) => 6,
        Error::Stage { .. } => 7,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path: path.into(), message: e.to_string() })
}

fn job<T: DeserializeOwned + Default>(cli: &Cli) -> Result<T> {
    cli.config.as_deref().map(read_json).unwrap_or_else(|| Ok(T::default()))
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli.config.as_deref().ok_or_else(|| Error::Config("this command needs --config <pipeline.json>".into()))?;
    PipelineConfig::load(path)
}

/// Writes to `--out` when given, stdout otherwise.
fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io { path: p.clone(), source: e }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn out_dir(cli: &Cli, default: &str) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    Ok(dir)
}

fn progress(s: &EpochStats) {
    eprintln!(
        "epoch {:>3}  train {:.4}  val {:.4}  ({:.1}s)",
        s.epoch, s.train_loss, s.val_loss, s.seconds
    );
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(cli, a),
        Command::TrainDetector(a) => train_detector_cmd(cli, a),
        Command::TrainTranslator(a) => train_translator_cmd(cli, a),
        Command::Ablate(a) => ablate(cli, a),
        Command::Detect { image } => detect(cli, image),
        Command::TranslateText(a) => translate_text_cmd(cli, a),
        Command::TranslateImage { image, boxes_only } => {
            if *boxes_only {
                return detect(cli, image);
            }
            let pipeline = Pipeline::from_config(&pipeline_config(cli)?)?;
            let result = pipeline.translate_image_file(image)?;
            emit(cli, &serde_json::to_string_pretty(&result)?)
        }
        Command::Evaluate(a) => evaluate(cli, a),
        Command::OcrHealth(a) => ocr_health(cli, a),
    }
}

fn parse_direction(s: &str) -> Result<(Language, Language)> {
    let (a, b) = s
        .split_once('-')
        .ok_or_else(|| Error::Config(format!("direction {s:?} is not of the form src-tgt")))?;
    Ok((a.parse()?, b.parse()?))
}

fn gen_data(cli: &Cli, a: &GenData) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match a.kind {
        DataKind::Images => {
            let mut cfg = match &cli.config {
                Some(p) => read_json::<SynthConfig>(p)?,
                None => SynthConfig::from_assets(&a.assets)?,
            };
            if !a.languages.is_empty() {
                cfg.languages = a.languages.clone();
            }
            if let Some(c) = a.canvas {
                cfg.canvas_size = Some((c, c));
            }
            if let Some(m) = a.max_words {
                cfg.max_words = m;
            }
            cfg.seed = seed;
            let dir = out_dir(cli, "data")?;
            let manifest = generate_dataset(&cfg, a.n, &dir)?;
            eprintln!("wrote {} samples to {}", manifest.len(), dir.display());
        }
        DataKind::Corpus => {
            let dirs = a.directions.iter().map(|d| parse_direction(d)).collect::<Result<Vec<_>>>()?;
            let grammar = ToyGrammar::new(match &cli.config {
                Some(p) => read_json(p)?,
                None => ToyGrammarConfig::default(),
            });
            let pairs = grammar.corpus(&dirs, a.n, seed);
            let path = cli.out.clone().unwrap_or_else(|| PathBuf::from("corpus.csv"));
            write_parallel_corpus(&path, &pairs)?;
            eprintln!("wrote {} pairs to {}", pairs.len(), path.display());
        }
    }
    Ok(())
}

fn train_detector_cmd(cli: &Cli, a: &TrainDetector) -> Result<()> {
    let mut j: DetectorJob = job(cli)?;
    if let Some(s) = a.size {
        j.unet.input_size = (s, s, j.unet.input_size.2);
    }
    if let Some(d) = a.depth {
        j.unet.encoder_depth = d;
    }
    if let Some(b) = a.base {
        j.unet.base_channels = b;
    }
    if let Some(d) = a.dropout {
        j.unet.dropout = d;
    }
    if let Some(e) = a.epochs {
        j.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        j.train.learning_rate = lr;
    }
    if let Some(b) = a.batch {
        j.train.batch_size = b;
    }
    if a.no_augment {
        j.train.augment = None;
    }
    if let Some(s) = cli.seed {
        j.train.seed = s;
        j.unet.init_seed = s;
    }
    let manifest = load_manifest(&a.data)?;
    let dir = out_dir(cli, "runs/detector")?;
    let trained = train_detector_from_manifest(&a.data, &manifest, &j.train, j.unet, &mut progress)?;
    trained.model.to_checkpoint(trained.best_epoch, trained.best_val_loss).save(&dir.join("detector.ckpt"))?;
    trained.history.write_csv(&dir.join("loss.csv"))?;
    eprintln!("best epoch {} (val {:.4}); wrote {}", trained.best_epoch, trained.best_val_loss, dir.display());
    Ok(())
}

fn apply_nmt(cli: &Cli, o: &NmtOverrides, model: &mut TransformerConfig, train: &mut NmtTrainConfig, vocab: &mut VocabOptions) {
    if o.tiny {
        *model = TransformerConfig { init_seed: model.init_seed, ..TransformerConfig::tiny() };
    }
    if let Some(e) = o.epochs {
        train.epochs = e;
    }
    if let Some(lr) = o.lr {
        train.learning_rate = lr;
    }
    if let Some(b) = o.batch {
        train.batch_size = b;
    }
    if let Some(f) = o.min_freq {
        vocab.min_freq = f;
    }
    if let Some(s) = cli.seed {
        train.seed = s;
        model.init_seed = s;
    }
}

fn train_translator_cmd(cli: &Cli, a: &TrainTranslator) -> Result<()> {
    let mut j: TranslatorJob = job(cli)?;
    apply_nmt(cli, &a.nmt, &mut j.model, &mut j.train, &mut j.vocab);
    let opts = CorpusOptions { normalize: j.normalize, max_seq_len: j.max_seq_len.or(Some(j.model.max_seq_len)) };
    let (pairs, report) = load_parallel_corpus(&a.corpus, opts)?;
    eprintln!("loaded {} of {} rows", report.loaded, report.total_rows);
    let val_pairs: Vec<ParallelPair> = match &a.val {
        Some(p) => load_parallel_corpus(p, opts)?.0,
        None => Vec::new(),
    };
    let (sv, tv) = build_vocabularies(&pairs, j.vocab);
    let train = encode_corpus(&pairs, &sv, &tv)?;
    let val = encode_corpus(&val_pairs, &sv, &tv)?;
    let dir = out_dir(cli, "runs/translator")?;
    let (sp, tp) = (dir.join("src.vocab"), dir.join("tgt.vocab"));
    sv.save(&sp)?;
    tv.save(&tp)?;
    eprintln!("vocabularies: {} source, {} target tokens", sv.len(), tv.len());
    let trained = train_translator(&train, &val, &j.train, j.model, sv.len(), tv.len(), &mut progress)?;
    let refs = (VocabRef::new(&sp, &sv), VocabRef::new(&tp, &tv));
    trained
        .model
        .to_checkpoint(trained.best_epoch, trained.best_val_loss, Some((&refs.0, &refs.1)))
        .save(&dir.join("translator.ckpt"))?;
    trained.history.write_csv(&dir.join("loss.csv"))?;
    eprintln!("best epoch {} (val {:.4}); wrote {}", trained.best_epoch, trained.best_val_loss, dir.display());
    Ok(())
}

fn ablate(cli: &Cli, a: &Ablate) -> Result<()> {
    let mut opts: AblationOptions = job(cli)?;
    let AblationOptions { model, train, vocab } = &mut opts;
    apply_nmt(cli, &a.nmt, model, train, vocab);
    let load = |p: &Path| load_parallel_corpus(p, CorpusOptions::default()).map(|r| r.0);
    let rows = run_data_ablation(&load(&a.corpus)?, &load(&a.heldout)?, &a.sizes, &opts, &mut |size, s| {
        eprint!("[{size} pairs] ");
        progress(s);
    })?;
    match &cli.out {
        Some(p) => write_ablation_csv(p, &rows),
        None => {
            print!("{}", doctrans_core::transformer::ablation_csv(&rows));
            Ok(())
        }
    }
}

fn detect(cli: &Cli, image: &Path) -> Result<()> {
    let cfg = pipeline_config(cli)?;
    let model = UNet::load(&cfg.detector_checkpoint)?;
    let img = doctrans_core::detector::load_rgb(image)?;
    let settings = cfg.settings();
    let mask = binarize_mask(&predict_mask(&model, &img)?, settings.binarize_threshold)?;
    emit(cli, &boxes_to_json(&mask_to_boxes(&mask, &settings)?))
}

fn translate_text_cmd(cli: &Cli, a: &TranslateText) -> Result<()> {
    let cfg = match &a.checkpoint {
        Some(_) => None,
        None => Some(pipeline_config(cli)?),
    };
    let translator = match (&a.checkpoint, &cfg) {
        (Some(ck), _) => Translator::load(ck, a.src_vocab.as_ref().unwrap(), a.tgt_vocab.as_ref().unwrap())?,
        (None, Some(c)) => Translator::load(&c.translator_checkpoint, &c.src_vocab, &c.tgt_vocab)?,
        (None, None) => unreachable!(),
    };
    let from = a.from.or(cfg.as_ref().map(|c| c.source_language));
    let to = a.to.or(cfg.as_ref().map(|c| c.target_language));
    let (Some(from), Some(to)) = (from, to) else {
        return Err(Error::Config("--from and --to are required without --config".into()));
    };
    let text = match &a.text {
        Some(t) => t.clone(),
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).map_err(|e| Error::Io { path: "<stdin>".into(), source: e })?;
            s
        }
    };
    let out = translate_text(&translator as &dyn TextTranslator, &text, from, to)?;
    emit(cli, &out)
}

fn evaluate(cli: &Cli, a: &Evaluate) -> Result<()> {
    if let (Some(data), Some(refs)) = (&a.data, &a.references) {
        let pipeline = Pipeline::from_config(&pipeline_config(cli)?)?;
        let manifest = load_manifest(data)?;
        let text = std::fs::read_to_string(refs).map_err(|e| Error::Io { path: refs.clone(), source: e })?;
        let references: Vec<String> = text.lines().map(str::to_string).collect();
        let report = evaluate_end_to_end(&pipeline, data, &manifest, &references)?;
        return emit(cli, &report.to_json());
    }
    let (hyps, refs) = match (&a.hyps, &a.refs, &a.csv) {
        (Some(h), Some(r), None) => read_aligned_files(h, r)?,
        (None, None, Some(c)) => read_pairs_csv(c)?,
        _ => {
            return Err(Error::Config(
                "give --hyps and --refs, or --csv, or --data with --references".into(),
            ))
        }
    };
    let report = evaluate_corpus(&hyps, &refs, EvalOptions::default())?;
    emit(cli, &if a.debug { report.to_json_debug() } else { report.to_json() })
}

fn ocr_health(cli: &Cli, a: &OcrHealth) -> Result<()> {
    let spec = match (a.engine, &cli.config) {
        (Some(Engine::Mock), _) => {
            let table = a.mock_table.as_ref().ok_or_else(|| Error::Config("--engine mock needs --mock-table".into()))?;
            RecognizerSpec::mock(table)
        }
        (Some(Engine::External), _) => RecognizerSpec::external(None),
        (None, Some(path)) => {
            let v: serde_json::Value = read_json(path)?;
            serde_json::from_value(v.get("recognizer").cloned().unwrap_or(serde_json::Value::Null))
                .map_err(|e| Error::Format { path: path.clone(), message: format!("recognizer: {e}") })?
        }
        (None, None) => RecognizerSpec::external(None),
    };
    let rec = build_recognizer(&spec)?;
    let version = rec.health_check()?;
    let kind = match spec.engine {
        EngineKind::External => "external",
        EngineKind::Mock => "mock",
    };
    emit(cli, &format!("{kind}: {version}"))
}
