use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gpd::classifier::{cross_validate, train, SvmModel};
use gpd::cloud::{load_pcd, Aabb, PointCloud, ViewSet};
use gpd::features::Dataset;
use gpd::handgeom::{HandHypothesis, HypothesisRecord};
use gpd::io::write_atomic;
use gpd::labeler::{Label, LabeledHand, LabeledRecord};
use gpd::pipeline::{
    build_training_set, detect, detect_seed, evaluate, label, preprocess, sample, Classifier, Detection, Funnel,
    PipelineConfig, Prepared,
};
use gpd::selection::RankedGrasp;
use gpd::synth::store::{read_corpus, read_scene, write_corpus};
use gpd::synth::{make_corpus_with, CorpusScene, Preset};
use nalgebra::Vector3;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gpd", version, about = "Antipodal grasp detection on point clouds")]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Input {
    /// Scene directory written by `synth`.
    #[arg(long, conflicts_with = "cloud")]
    scene: Option<PathBuf>,
    /// Registered PCD views, one per camera. The i-th file becomes view i.
    #[arg(long)]
    cloud: Vec<PathBuf>,
    /// Workspace box as xmin,ymin,zmin,xmax,ymax,zmax.
    #[arg(long, value_delimiter = ',', num_args = 6, allow_hyphen_values = true)]
    workspace: Option<Vec<f64>>,
}

#[derive(Args)]
struct Variant {
    /// Trained model JSON.
    #[arg(long, required_unless_present_any = ["no_classify", "label_classify"])]
    model: Option<PathBuf>,
    /// Keep every hypothesis.
    #[arg(long, conflicts_with_all = ["model", "label_classify"])]
    no_classify: bool,
    /// Replace the SVM with the near-antipodal test.
    #[arg(long, conflicts_with = "model")]
    label_classify: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Single,
    Clutter,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-view corpus.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "single")]
        preset: PresetArg,
        /// Objects per clutter scene.
        #[arg(long, default_value_t = 10)]
        objects: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Sample hand hypotheses (JSON Lines).
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
    },
    /// Label hypotheses with the near-antipodal test (JSON Lines).
    Label {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        /// Hypotheses from `sample`; sampled afresh when omitted.
        #[arg(long)]
        hands: Option<PathBuf>,
    },
    /// Train the SVM on a corpus.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Also write the descriptor dataset as PREFIX.bin and PREFIX.json.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Stratified k-fold cross-validation.
    Xval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "dataset", conflicts_with = "dataset")]
        corpus: Option<PathBuf>,
        /// Dataset prefix written by `train --dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
    },
    /// Detect and rank grasps (JSON Lines plus a summary).
    Detect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        variant: Variant,
    },
    /// Score detections on a corpus against the oracle (CSV).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        variant: Variant,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Puts every point of a single-view cloud under view `id`.
fn as_view(c: PointCloud, id: u32, path: &Path) -> Result<PointCloud> {
    if c.view_origins.len() != 1 {
        bail!("{} must hold exactly one view", path.display());
    }
    let origin = *c.view_origins.values().next().unwrap();
    let n = c.len();
    Ok(PointCloud {
        views: vec![ViewSet::single(id); n],
        view_origins: [(id, origin)].into(),
        ..c
    })
}

fn bounds_of(views: &[PointCloud]) -> Result<Aabb> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in views.iter().flat_map(|v| &v.points) {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if views.iter().all(|v| v.is_empty()) {
        bail!("input clouds are empty");
    }
    Ok(Aabb::new(lo, hi)?)
}

/// Loads the input views and workspace, then preprocesses.
fn prepare(input: &Input, cfg: &PipelineConfig) -> Result<Prepared> {
    let (views, default_ws) = match &input.scene {
        Some(dir) => {
            let cs = read_scene(dir).with_context(|| format!("scene {}", dir.display()))?;
            (cs.views.to_vec(), Some(cs.workspace))
        }
        None => {
            if input.cloud.is_empty() {
                bail!("give --scene or at least one --cloud");
            }
            let views = input
                .cloud
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let c = load_pcd(p).with_context(|| format!("cloud {}", p.display()))?;
                    as_view(c, i as u32, p)
                })
                .collect::<Result<Vec<_>>>()?;
            (views, None)
        }
    };
    let ws = match (&input.workspace, default_ws) {
        (Some(v), _) => Aabb::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))?,
        (None, Some(ws)) => ws,
        (None, None) => bounds_of(&views)?,
    };
    preprocess(&views, &ws, cfg).context("preprocess")
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, &it)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// `grasps.jsonl` becomes `grasps.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn read_hands(path: &Path) -> Result<Vec<HandHypothesis>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("hands {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let r: HypothesisRecord = serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1))?;
            Ok(HandHypothesis::from(&r))
        })
        .collect()
}

fn load_model(path: &Path) -> Result<SvmModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("model {}", path.display()))?;
    SvmModel::from_json(&text).with_context(|| format!("model {}", path.display()))
}

fn load_corpus(dir: &Path) -> Result<Vec<CorpusScene>> {
    read_corpus(dir).with_context(|| format!("corpus {}", dir.display()))
}

enum Loaded {
    Svm(SvmModel),
    Label,
    Passthrough,
}

impl Loaded {
    fn new(v: &Variant) -> Result<Self> {
        Ok(if v.no_classify {
            Loaded::Passthrough
        } else if v.label_classify {
            Loaded::Label
        } else {
            Loaded::Svm(load_model(v.model.as_ref().expect("clap requires a model"))?)
        })
    }

    fn classifier(&self) -> Classifier<'_> {
        match self {
            Loaded::Svm(m) => Classifier::Svm(m),
            Loaded::Label => Classifier::Label,
            Loaded::Passthrough => Classifier::Passthrough,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Loaded::Svm(_) => "svm",
            Loaded::Label => "label",
            Loaded::Passthrough => "no-classify",
        }
    }
}

#[derive(Serialize)]
struct DetectSummary<'a> {
    variant: &'a str,
    seed: u64,
    funnel: &'a Funnel,
}

#[derive(Serialize)]
struct XvalReport {
    folds: usize,
    rows: usize,
    accuracy: f64,
    fold_accuracies: Vec<f64>,
    tp: usize,
    fp: usize,
    tn: usize,
    fn_: usize,
}

fn ranked_records(det: &Detection) -> Vec<RankedGrasp> {
    det.ranked.iter().enumerate().map(|(i, c)| RankedGrasp::new(i, c)).collect()
}

fn report_times(stage: &str, d: Duration) {
    eprintln!("{stage:>10}: {:.3} s", d.as_secs_f64());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            common,
            preset,
            objects,
            count,
        } => {
            let cfg = load_config(&common)?;
            let preset = match preset {
                PresetArg::Single => Preset::SingleObject,
                PresetArg::Clutter => Preset::Clutter(objects),
            };
            let corpus = make_corpus_with(preset, count, cfg.seed, &cfg.corpus).context("synth")?;
            write_corpus(&common.out, &corpus).context("synth")?;
            println!("wrote {} scenes to {}", corpus.len(), common.out.display());
        }
        Command::Sample { common, input } => {
            let cfg = load_config(&common)?;
            let prep = prepare(&input, &cfg)?;
            let hands = sample(&prep, &cfg, cfg.sampler.n_samples, detect_seed(&cfg, 0)).context("sample")?;
            write_jsonl(&common.out, hands.iter().map(HypothesisRecord::from))?;
            println!("{} hypotheses from {} samples", hands.len(), cfg.sampler.n_samples);
        }
        Command::Label { common, input, hands } => {
            let cfg = load_config(&common)?;
            let prep = prepare(&input, &cfg)?;
            let hands = match hands {
                Some(p) => read_hands(&p)?,
                None => sample(&prep, &cfg, cfg.sampler.n_samples, detect_seed(&cfg, 0)).context("sample")?,
            };
            let outcomes = label(&prep, &hands, &cfg).context("label")?;
            let count = |l: Label| outcomes.iter().filter(|o| o.label == l).count();
            let records = hands.iter().zip(&outcomes).map(|(h, o)| {
                LabeledRecord::from(&LabeledHand {
                    hand: *h,
                    outcome: *o,
                })
            });
            write_jsonl(&common.out, records)?;
            println!(
                "positive {} negative {} indeterminate {}",
                count(Label::Positive),
                count(Label::Negative),
                count(Label::Indeterminate)
            );
        }
        Command::Train { common, corpus, dataset } => {
            let cfg = load_config(&common)?;
            let scenes = load_corpus(&corpus)?;
            let t = Instant::now();
            let (ds, summary) = build_training_set(&scenes, &cfg).context("features")?;
            report_times("features", t.elapsed());
            if let Some(prefix) = dataset {
                ds.write(&prefix.with_extension("bin"), &prefix.with_extension("json"))?;
            }
            let t = Instant::now();
            let (model, report) = train(&ds.rows, &ds.labels, &cfg.svm).context("train")?;
            report_times("train", t.elapsed());
            write_atomic(&common.out, model.to_json()?.as_bytes())?;
            #[derive(Serialize)]
            struct TrainOut<'a> {
                data: &'a gpd::pipeline::TrainingSummary,
                positives: usize,
                negatives: usize,
                n_support: usize,
                n_bounded: usize,
                iterations: usize,
                converged: bool,
                objective: f64,
            }
            write_json(
                &sibling(&common.out, "report.json"),
                &TrainOut {
                    data: &summary,
                    positives: report.positives,
                    negatives: report.negatives,
                    n_support: report.n_support,
                    n_bounded: report.n_bounded,
                    iterations: report.iterations,
                    converged: report.converged,
                    objective: report.objective,
                },
            )?;
            println!(
                "trained on {} positives and {} negatives ({} rows), {} support vectors",
                report.positives, report.negatives, summary.rows, report.n_support
            );
        }
        Command::Xval {
            common,
            corpus,
            dataset,
            folds,
        } => {
            let cfg = load_config(&common)?;
            let ds = match (corpus, dataset) {
                (_, Some(prefix)) => Dataset::read(&prefix.with_extension("bin"), &prefix.with_extension("json"))
                    .with_context(|| format!("dataset {}", prefix.display()))?,
                (Some(dir), None) => build_training_set(&load_corpus(&dir)?, &cfg).context("features")?.0,
                (None, None) => unreachable!("clap requires an input"),
            };
            let cv = cross_validate(&ds.rows, &ds.labels, folds, gpd::seed::derive_seed(cfg.seed, "xval"), &cfg.svm)
                .context("xval")?;
            println!("{:>6} {:>9}", "fold", "accuracy");
            for (i, a) in cv.fold_accuracies.iter().enumerate() {
                println!("{:>6} {:>9.4}", i, a);
            }
            println!("{:>6} {:>9.4}", "mean", cv.accuracy);
            write_json(
                &common.out,
                &XvalReport {
                    folds,
                    rows: ds.len(),
                    accuracy: cv.accuracy,
                    fold_accuracies: cv.fold_accuracies.clone(),
                    tp: cv.confusion.tp,
                    fp: cv.confusion.fp,
                    tn: cv.confusion.tn,
                    fn_: cv.confusion.fn_,
                },
            )?;
        }
        Command::Detect { common, input, variant } => {
            let cfg = load_config(&common)?;
            let loaded = Loaded::new(&variant)?;
            let prep = prepare(&input, &cfg)?;
            let seed = detect_seed(&cfg, 0);
            let det = detect(&prep, loaded.classifier(), &cfg, seed).context("detect")?;
            report_times("sample", det.times.sample);
            report_times("classify", det.times.classify);
            report_times("select", det.times.select);
            write_jsonl(&common.out, ranked_records(&det))?;
            write_json(
                &sibling(&common.out, "summary.json"),
                &DetectSummary {
                    variant: loaded.name(),
                    seed,
                    funnel: &det.funnel,
                },
            )?;
            let f = &det.funnel;
            println!(
                "samples {} -> hypotheses {} -> positives {} -> clusters {}",
                f.samples, f.hypotheses, f.positives, f.clusters
            );
        }
        Command::Eval { common, corpus, variant } => {
            let cfg = load_config(&common)?;
            let loaded = Loaded::new(&variant)?;
            let scenes = load_corpus(&corpus)?;
            let mut csv = String::from(
                "scene,reported,reported_antipodal,precision,top_antipodal,hypotheses,hypotheses_antipodal,positives,positives_antipodal,recall\n",
            );
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let (mut prec, mut nprec, mut top, mut ntop) = (0.0, 0usize, 0usize, 0usize);
            let mut times = [Duration::ZERO; 4];
            for (i, cs) in scenes.iter().enumerate() {
                let t = Instant::now();
                let prep = preprocess(&cs.views, &cs.workspace, &cfg).with_context(|| format!("preprocess scene {i}"))?;
                times[0] += t.elapsed();
                let det = detect(&prep, loaded.classifier(), &cfg, detect_seed(&cfg, i)).with_context(|| format!("detect scene {i}"))?;
                times[1] += det.times.sample;
                times[2] += det.times.classify;
                times[3] += det.times.select;
                let ev = evaluate(&cs.scene, &det, cfg.friction);
                if let Some(p) = ev.precision {
                    prec += p;
                    nprec += 1;
                }
                if let Some(t) = ev.top_antipodal {
                    top += t as usize;
                    ntop += 1;
                }
                csv.push_str(&format!(
                    "{i},{},{},{},{},{},{},{},{},{}\n",
                    ev.reported,
                    ev.reported_antipodal,
                    opt(ev.precision),
                    ev.top_antipodal.map(|b| b.to_string()).unwrap_or_default(),
                    ev.hypotheses,
                    ev.hypotheses_antipodal,
                    det.positives.len(),
                    ev.positives_antipodal,
                    opt(ev.recall),
                ));
            }
            let mean_prec = (nprec > 0).then(|| prec / nprec as f64);
            let top_rate = (ntop > 0).then(|| top as f64 / ntop as f64);
            csv.push_str(&format!("mean,,,{},{},,,,,\n", opt(mean_prec), opt(top_rate)));
            write_atomic(&common.out, csv.as_bytes())?;
            for (stage, d) in ["preprocess", "sample", "classify", "select"].iter().zip(times) {
                report_times(stage, d);
            }
            println!(
                "{}: mean precision {}, top grasp antipodal in {top}/{ntop} scenes",
                loaded.name(),
                opt(mean_prec)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let _ = std::io::stderr().flush();
            ExitCode::FAILURE
        }
    }
}
