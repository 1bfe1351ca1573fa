use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use atal::dataset::{load_corpus, synth_generate, write_corpus, Behavior, Corpus, Split};
use atal::model::{write_atomic, Checkpoint};
use atal::pipeline::{evaluate_behavior, infer_videos, to_records};
use atal::postprocess::{load_predictions, write_predictions, NmsMode, PredictionsHeader};
use atal::evaluation::MetricsReport;
use atal::training::{examples_from_corpus, train as train_model};

use crate::config::RunConfig;
use crate::{Common, EvalArgs, InferArgs, SplitArg, SynthArgs, TrainArgs};

pub const CHECKPOINT_PREFIX: &str = "checkpoint-";
pub const CHECKPOINT_EXT: &str = "atal";

pub fn checkpoint_file(b: Behavior) -> String {
    format!("{CHECKPOINT_PREFIX}{b}.{CHECKPOINT_EXT}")
}

pub fn log_file(b: Behavior) -> String {
    format!("train-log-{b}.jsonl")
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut config = RunConfig::load(common.config.as_deref())?;
    if common.seed.is_some() {
        config.seed = common.seed;
    }
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

/// Directory that receives a file's sibling outputs.
fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut config = base_config(&args.common)?;
    let s = &mut config.synth;
    s.videos = args.videos.unwrap_or(s.videos);
    s.steps = args.steps.unwrap_or(s.steps);
    s.feature_dim = args.dim.unwrap_or(s.feature_dim);
    s.snr = args.snr.unwrap_or(s.snr);
    config.resolve_seeds();

    let corpus = synth_generate(&config.synth)?;
    create_dir(&args.out)?;
    write_corpus(&args.out, &corpus.entries, &corpus.features, &corpus.annotations)
        .with_context(|| format!("writing corpus to {}", args.out.display()))?;
    config.echo(&args.out, "synth")?;

    let count = |split| corpus.entries.iter().filter(|e| e.split == Some(split)).count();
    println!(
        "{} videos ({} train, {} test), {} steps x {} features, snr {}",
        corpus.entries.len(),
        count(Split::Train),
        count(Split::Test),
        config.synth.steps,
        config.synth.feature_dim,
        config.synth.snr
    );
    for b in Behavior::ALL {
        println!("  {:<12} {} segments", b.name(), corpus.annotations.segment_count(b));
    }
    Ok(())
}

fn parse_classes(name: &str) -> Result<Vec<Behavior>> {
    if name == "all" {
        return Ok(Behavior::ALL.to_vec());
    }
    Ok(vec![name.parse::<Behavior>().map_err(|e| anyhow!("{e}; or `all`"))?])
}

fn check_dim(corpus: &Corpus, expected: usize) -> Result<()> {
    match corpus.feature_dim() {
        Some(found) if found != expected => bail!(
            "feature dimension mismatch: the model expects {expected} but {} holds {found}",
            corpus.root.display()
        ),
        Some(_) => Ok(()),
        None => bail!("corpus {} lists no videos", corpus.root.display()),
    }
}

/// Training videos: the train split, or every video when the manifest has
/// no split assignments.
fn training_indices(corpus: &Corpus) -> Vec<usize> {
    if corpus.entries.iter().all(|e| e.split.is_none()) {
        corpus.select(None)
    } else {
        corpus.select(Some(Split::Train))
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let classes = parse_classes(&args.class)?;
    let mut config = base_config(&args.common)?;
    let t = &mut config.training;
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.learning_rate = args.lr.unwrap_or(t.learning_rate);
    config.resolve_seeds();
    config.model.validate()?;
    config.training.validate()?;

    let corpus = load_corpus(&args.data).with_context(|| format!("loading corpus {}", args.data.display()))?;
    check_dim(&corpus, config.model.feature_dim)?;
    let indices = training_indices(&corpus);
    if indices.is_empty() {
        bail!("corpus {} has no training videos", args.data.display());
    }
    create_dir(&args.out)?;
    config.echo(&args.out, "train")?;

    for b in classes {
        let examples = examples_from_corpus(&corpus, &indices, b)?;
        let log_path = args.out.join(log_file(b));
        let file = File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
        let mut sink = BufWriter::new(file);
        let outcome = train_model(&examples, &config.model, &config.training, Some(&mut sink))
            .with_context(|| format!("training {b}"))?;
        sink.flush().with_context(|| format!("writing {}", log_path.display()))?;
        let ckpt_path = args.out.join(checkpoint_file(b));
        Checkpoint::new(outcome.params, Some(b.name().into()))
            .save(&ckpt_path)
            .with_context(|| format!("writing {}", ckpt_path.display()))?;
        let (first, last) = (&outcome.log[0], outcome.log.last().expect("at least one epoch"));
        println!(
            "{:<12} {} videos, {} epochs, total loss {:.4} -> {:.4}, final lr {}",
            b.name(),
            examples.len(),
            outcome.log.len(),
            first.total_loss,
            last.total_loss,
            last.lr
        );
    }
    Ok(())
}

/// Expands run directories into their checkpoint files, sorted by name.
fn checkpoint_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    let name = f.file_name().and_then(|n| n.to_str()).unwrap_or("");
                    name.starts_with(CHECKPOINT_PREFIX) && f.extension().is_some_and(|x| x == CHECKPOINT_EXT)
                })
                .collect();
            if found.is_empty() {
                bail!("no {CHECKPOINT_PREFIX}*.{CHECKPOINT_EXT} files in {}", p.display());
            }
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn infer(args: InferArgs) -> Result<()> {
    let mut config = base_config(&args.common)?;
    let post = &mut config.postprocess;
    post.threshold = args.threshold.unwrap_or(post.threshold);
    if let Some(mode) = &args.nms {
        post.nms.mode = mode.parse::<NmsMode>()?;
    }
    post.nms.iou_threshold = args.nms_iou.unwrap_or(post.nms.iou_threshold);
    config.resolve_seeds();
    let post = config.postprocess.clone();

    let corpus = load_corpus(&args.data).with_context(|| format!("loading corpus {}", args.data.display()))?;
    let has_splits = corpus.entries.iter().any(|e| e.split.is_some());
    let indices = match args.split.unwrap_or(if has_splits { SplitArg::Test } else { SplitArg::All }) {
        SplitArg::Train => corpus.select(Some(Split::Train)),
        SplitArg::Test => corpus.select(Some(Split::Test)),
        SplitArg::All => corpus.select(None),
    };

    let mut classes = Vec::new();
    let mut records = Vec::new();
    for path in checkpoint_paths(&args.ckpt)? {
        let ckpt = Checkpoint::load(&path)?;
        let b: Behavior = ckpt
            .behavior
            .as_deref()
            .ok_or_else(|| anyhow!("{} does not record its behavior class", path.display()))?
            .parse()?;
        if classes.contains(&b) {
            bail!("more than one checkpoint for {b}");
        }
        check_dim(&corpus, ckpt.params.config.feature_dim).with_context(|| format!("checkpoint {}", path.display()))?;
        let inference = infer_videos(&ckpt.params, &corpus, &indices, b, post.threshold, &post.nms)?;
        records.extend(to_records(&inference));
        classes.push(b);
    }
    let videos = indices.iter().map(|&i| corpus.entries[i].video_id.clone()).collect();
    let header = PredictionsHeader::new(post.threshold, post.nms.mode, classes, videos);
    let dir = parent_dir(&args.out);
    create_dir(&dir)?;
    write_predictions(&args.out, &header, &records).with_context(|| format!("writing {}", args.out.display()))?;
    config.echo(&dir, "infer")?;
    println!("{} segments over {} videos written to {}", records.len(), indices.len(), args.out.display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut config = base_config(&args.common)?;
    if let Some(t) = args.tiou {
        config.evaluation.tiou_thresholds = t;
    }
    config.resolve_seeds();
    let thresholds = &config.evaluation.tiou_thresholds;
    if thresholds.is_empty() || thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        bail!("t-IoU thresholds must be a non-empty list of values in [0, 1]");
    }

    let (header, records) = load_predictions(&args.pred)?;
    let corpus = load_corpus(&args.gt).with_context(|| format!("loading corpus {}", args.gt.display()))?;
    let offenders: BTreeSet<&str> = header
        .videos
        .iter()
        .map(String::as_str)
        .chain(records.iter().map(|r| r.video_id.as_str()))
        .filter(|id| corpus.index_of(id).is_none())
        .collect();
    if !offenders.is_empty() {
        bail!(
            "predictions mention videos absent from {}: {}",
            args.gt.display(),
            offenders.into_iter().collect::<Vec<_>>().join(", ")
        );
    }

    let mut report = MetricsReport::default();
    for &b in &header.classes {
        report.behaviors.push(evaluate_behavior(&corpus, &header.videos, &records, b, thresholds)?);
    }
    let text = report.render_text();
    let dir = parent_dir(&args.out);
    create_dir(&dir)?;
    write_atomic(&args.out, report.to_json().as_bytes())?;
    write_atomic(&args.out.with_extension("txt"), text.as_bytes())?;
    config.echo(&dir, "eval")?;
    print!("{text}");
    Ok(())
}
