use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ecg_xai::explain::{
    contiguous_groups, deeplift_with_diagnostics, exact_shapley, gradient_shap, kernel_shap,
    permutation_importance, Attribution, Baseline, KernelShapConfig, Method,
};
use ecg_xai::metrics::{class_file_stem, classification_report, roc_auc};
use ecg_xai::model::{
    build_network_with_dropout, load_checkpoint, save_checkpoint, train, write_history_csv,
    Network, TrainConfig, DEFAULT_DROPOUT,
};
use ecg_xai::preprocess::{
    build_dataset, process_record, read_dataset, resample_linear, stratified_subset, write_dataset,
    BeatSegment, DatasetManifest, DatasetSplit, PreprocessConfig,
};
use ecg_xai::signal_io::{read_csv_beats, read_label_map, read_wfdb_annotations, read_wfdb_record};
use ecg_xai::viz::{render_roc, render_saliency, ColorScale, Normalization, SaliencyStyle};
use ecg_xai::{selftest, BEAT_LEN};

mod config;

/// Process exit codes. Usage errors (unknown flag, bad value) exit with 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    MissingInput = 3,
    InvalidInput = 4,
    ClassMismatch = 5,
    Output = 6,
    Compute = 7,
    SelfTestFailed = 8,
}

#[derive(Debug)]
struct Failure {
    exit: Exit,
    error: anyhow::Error,
}

type Outcome<T> = Result<T, Failure>;

trait OrExit<T> {
    fn or_exit(self, exit: Exit) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, exit: Exit) -> Outcome<T> {
        self.map_err(|e| Failure {
            exit,
            error: e.into(),
        })
    }
}

fn fail<T>(exit: Exit, msg: impl Into<String>) -> Outcome<T> {
    Err(Failure {
        exit,
        error: anyhow::anyhow!(msg.into()),
    })
}

fn require(path: &Path) -> Outcome<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        fail(
            Exit::MissingInput,
            format!("input not found: {}", path.display()),
        )
    }
}

fn output_dir(path: &Path) -> Outcome<()> {
    if path.as_os_str().is_empty() {
        return Ok(());
    }
    std::fs::create_dir_all(path)
        .map_err(|e| anyhow::anyhow!("cannot create {}: {e}", path.display()))
        .or_exit(Exit::Output)
}

fn parent(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new(""))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or("out".into(), |n| n.to_string_lossy().into_owned())
}

fn echo<T: Serialize>(dir: &Path, name: &str, command: &str, args: &T) -> Outcome<()> {
    let path = config::write_echo(dir, name, command, args).or_exit(Exit::Output)?;
    info!("config echo written to {}", path.display());
    Ok(())
}

#[derive(Parser)]
#[command(
    name = "ecg-xai",
    version,
    about = "ECG beat classification with SHAP-family explanations"
)]
struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// WFDB records or a CSV beat file -> dataset file.
    Preprocess(PreprocessArgs),
    /// Dataset -> checkpoint and training history.
    Train(TrainArgs),
    /// Checkpoint + dataset -> classification report, ROC curves and plot.
    Evaluate(EvaluateArgs),
    /// Checkpoint + one beat -> attribution JSON and CSV.
    Explain(ExplainArgs),
    /// Attribution JSON -> saliency SVG.
    Render(RenderArgs),
    /// Run the built-in oracle checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Serialize)]
struct PreprocessArgs {
    /// Directory holding `<record>.hea`, `.dat` and annotation files.
    #[arg(long, env = "ECGXAI_DATA_DIR", default_value = "data/mitdb")]
    data_dir: PathBuf,
    /// Record names, comma separated. Defaults to every header in the data directory.
    #[arg(long, value_delimiter = ',')]
    records: Vec<String>,
    #[arg(long, default_value = "atr")]
    annotation_ext: String,
    /// Read labelled beats from a CSV file instead of WFDB records.
    #[arg(long, conflicts_with = "records")]
    csv: Option<PathBuf>,
    /// `label,symbol` map applied to CSV labels.
    #[arg(long, requires = "csv")]
    label_map: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    lead: usize,
    #[arg(long, default_value_t = 2000)]
    min_class_count: usize,
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    /// Keep a stratified subset of this many beats before filtering.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = DEFAULT_DROPOUT)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path; rewritten whenever validation accuracy improves.
    #[arg(long)]
    out: PathBuf,
    /// History CSV. Defaults to `<out>.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "eval")]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Needed for `--beat-index` and for data-derived baselines.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Validation-set beat to explain.
    #[arg(long, conflicts_with_all = ["record", "annotation_index"])]
    beat_index: Option<usize>,
    /// Record name (in the data directory) or header path.
    #[arg(long, requires = "annotation_index")]
    record: Option<String>,
    /// Index into the record's beat annotations.
    #[arg(long, requires = "record")]
    annotation_index: Option<usize>,
    #[arg(long, env = "ECGXAI_DATA_DIR", default_value = "data/mitdb")]
    data_dir: PathBuf,
    #[arg(long, default_value = "atr")]
    annotation_ext: String,
    #[arg(long)]
    method: Method,
    /// Target class symbol. Defaults to the predicted class.
    #[arg(long)]
    class: Option<char>,
    /// `zeros`, `class-mean[:SYMBOL]` (training mean, default N) or `background[:N]`
    /// (N random training beats, default 100).
    #[arg(long, default_value = "zeros")]
    baseline: String,
    #[arg(long, default_value_t = 8)]
    group_size: usize,
    #[arg(long, default_value_t = 2048)]
    coalitions: usize,
    /// Gradient SHAP draws.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Permutation repeats per position.
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "explain")]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct RenderArgs {
    #[arg(long)]
    attribution: PathBuf,
    /// Defaults to the attribution path with an `.svg` extension.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `per-beat` or `global:<scale>`.
    #[arg(long, default_value = "per-beat")]
    normalization: String,
    /// Map signed scores (negative green, positive red) instead of magnitudes.
    #[arg(long)]
    signed: bool,
    #[arg(long, default_value_t = 2.5)]
    line_width: f64,
    #[arg(long, default_value_t = 900)]
    width: u32,
    #[arg(long, default_value_t = 360)]
    height: u32,
}

#[derive(Args, Serialize)]
struct SelftestArgs {
    /// Only run checks whose name contains this text.
    #[arg(long)]
    filter: Option<String>,
}

fn preprocess(args: &PreprocessArgs) -> Outcome<()> {
    let config = PreprocessConfig {
        lead: args.lead,
        ..PreprocessConfig::default()
    };
    let mut segments = Vec::new();
    if let Some(csv) = &args.csv {
        let map = match &args.label_map {
            Some(p) => Some(read_label_map(require(p)?).or_exit(Exit::InvalidInput)?),
            None => None,
        };
        let source = file_name(csv);
        for beat in read_csv_beats(require(csv)?, map.as_ref()).or_exit(Exit::InvalidInput)? {
            let samples = if beat.needs_resample {
                resample_linear(&beat.samples, BEAT_LEN)
            } else {
                beat.samples
            };
            segments.push(BeatSegment {
                samples,
                label: beat.label,
                source_record: source.clone(),
                r_peak_index: beat.row,
            });
        }
        info!("{} beats read from {}", segments.len(), csv.display());
    } else {
        let dir = require(&args.data_dir)?;
        let records = if args.records.is_empty() {
            let mut found: Vec<String> = std::fs::read_dir(dir)
                .or_exit(Exit::InvalidInput)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "hea"))
                .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .collect();
            found.sort();
            found
        } else {
            args.records.clone()
        };
        if records.is_empty() {
            return fail(
                Exit::MissingInput,
                format!("no .hea files in {}", dir.display()),
            );
        }
        let mut skipped = 0;
        for id in &records {
            let record = read_wfdb_record(require(&dir.join(format!("{id}.hea")))?)
                .or_exit(Exit::InvalidInput)?;
            let ann_path = dir.join(format!("{id}.{}", args.annotation_ext));
            let beats =
                read_wfdb_annotations(require(&ann_path)?, &record).or_exit(Exit::InvalidInput)?;
            let seg = process_record(&record, &beats, &config).or_exit(Exit::InvalidInput)?;
            info!(
                "record {id}: {} beats, {} at the boundary skipped",
                seg.segments.len(),
                seg.skipped
            );
            skipped += seg.skipped;
            segments.extend(seg.segments);
        }
        info!(
            "census: {} beats from {} records ({skipped} skipped at record boundaries)",
            segments.len(),
            records.len()
        );
    }
    let census = DatasetSplit::class_counts(&segments);
    info!("class counts before filtering: {census:?}");
    if let Some(n) = args.subset {
        segments = stratified_subset(segments, n, args.seed);
        info!("stratified subset of {} beats", segments.len());
    }
    let data = build_dataset(segments, args.min_class_count, args.split, args.seed)
        .or_exit(Exit::InvalidInput)?;
    output_dir(parent(&args.out))?;
    let manifest = write_dataset(
        &args.out,
        &data,
        args.seed,
        args.min_class_count,
        args.split,
        &config,
    )
    .or_exit(Exit::Output)?;
    info!(
        "classes {}: {} training, {} validation beats -> {}",
        manifest.class_index,
        data.train.len(),
        data.validation.len(),
        args.out.display()
    );
    echo(parent(&args.out), &file_name(&args.out), "preprocess", args)
}

fn load_dataset(path: &Path) -> Outcome<(DatasetSplit, DatasetManifest)> {
    read_dataset(require(path)?).or_exit(Exit::InvalidInput)
}

fn load_model(path: &Path) -> Outcome<Network> {
    load_checkpoint(require(path)?).or_exit(Exit::InvalidInput)
}

fn train_cmd(args: &TrainArgs) -> Outcome<()> {
    let (data, manifest) = load_dataset(&args.dataset)?;
    let mut net = build_network_with_dropout(data.class_index.len(), args.seed, args.dropout)
        .and_then(|n| n.with_class_index(data.class_index.clone()))
        .or_exit(Exit::InvalidInput)?;
    net.preprocess_hash = Some(manifest.preprocess_hash.clone());
    output_dir(parent(&args.out))?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        seed: args.seed,
        checkpoint_path: Some(args.out.clone()),
    };
    info!(
        "training on {} beats ({} validation), classes {}",
        data.train.len(),
        data.validation.len(),
        data.class_index
    );
    let outcome = train(net, &data, &cfg).or_exit(Exit::Compute)?;
    save_checkpoint(&outcome.network, &args.out).or_exit(Exit::Output)?;
    let history = args.history.clone().unwrap_or_else(|| {
        PathBuf::from(format!(
            "{}.history.csv",
            args.out.with_extension("").display()
        ))
    });
    write_history_csv(&history, &outcome.history).or_exit(Exit::Output)?;
    let best = &outcome.history[outcome.best_epoch - 1];
    info!(
        "best epoch {} (validation accuracy {:.4}) -> {}",
        outcome.best_epoch,
        best.val_acc,
        args.out.display()
    );
    echo(parent(&args.out), &file_name(&args.out), "train", args)
}

fn check_classes(
    net: &Network,
    data: &DatasetSplit,
    model_path: &Path,
    data_path: &Path,
) -> Outcome<()> {
    let same = match &net.class_index {
        Some(ci) => *ci == data.class_index,
        None => net.num_classes == data.class_index.len(),
    };
    if same {
        return Ok(());
    }
    let model_classes = net.class_index.as_ref().map_or_else(
        || format!("{} unlabelled outputs", net.num_classes),
        |c| format!("{c} ({})", c.len()),
    );
    fail(
        Exit::ClassMismatch,
        format!(
            "class mismatch: checkpoint {} has classes {model_classes}, dataset {} has classes {} ({})",
            model_path.display(),
            data_path.display(),
            data.class_index,
            data.class_index.len()
        ),
    )
}

fn evaluate(args: &EvaluateArgs) -> Outcome<()> {
    let net = load_model(&args.model)?;
    let (data, manifest) = load_dataset(&args.dataset)?;
    check_classes(&net, &data, &args.model, &args.dataset)?;
    net.check_preprocess_hash(&manifest.preprocess_hash);
    if data.validation.is_empty() {
        return fail(Exit::InvalidInput, "dataset has no validation beats");
    }
    let ci = &data.class_index;
    let mut truth = Vec::with_capacity(data.validation.len());
    let mut predicted = Vec::with_capacity(data.validation.len());
    let mut probabilities = Vec::with_capacity(data.validation.len());
    for seg in &data.validation {
        let p = net.predict(&seg.samples).or_exit(Exit::InvalidInput)?;
        truth.push(seg.label);
        predicted.push(ci.symbol(p.class).expect("class index matches network"));
        probabilities.push(p.probabilities.iter().map(|v| v.clamp(0.0, 1.0)).collect());
    }
    let roc = roc_auc(&truth, &probabilities, ci).or_exit(Exit::Compute)?;
    let report = classification_report(&truth, &predicted, ci)
        .or_exit(Exit::Compute)?
        .with_roc(roc);

    let dir = &args.out_dir;
    output_dir(dir)?;
    let write = |name: &str, text: &str| std::fs::write(dir.join(name), text).or_exit(Exit::Output);
    write("report.json", &report.to_json())?;
    let table = report.to_text_table();
    write("report.txt", &table)?;
    for curve in report.roc.iter().flatten() {
        write(
            &format!("roc_{}.csv", class_file_stem(curve.symbol)),
            &curve.to_csv(),
        )?;
    }
    render_roc(&report, dir.join("roc.svg")).or_exit(Exit::Output)?;
    eprint!("{table}");
    info!("evaluation written to {}", dir.display());
    echo(dir, "evaluate", "evaluate", args)
}

enum BaselineSpec {
    Zeros,
    ClassMean(char),
    Background(usize),
}

fn parse_baseline(s: &str) -> Outcome<BaselineSpec> {
    let (kind, arg) = s.split_once(':').map_or((s, None), |(k, a)| (k, Some(a)));
    match (kind, arg) {
        ("zeros", None) => Ok(BaselineSpec::Zeros),
        ("class-mean" | "class_mean", None) => Ok(BaselineSpec::ClassMean('N')),
        ("class-mean" | "class_mean", Some(a)) if a.chars().count() == 1 => {
            Ok(BaselineSpec::ClassMean(a.chars().next().expect("one char")))
        }
        ("background", None) => Ok(BaselineSpec::Background(100)),
        ("background", Some(a)) => a
            .parse()
            .ok()
            .filter(|&n: &usize| n > 0)
            .map(BaselineSpec::Background)
            .ok_or(())
            .or_else(|_| {
                fail(
                    Exit::InvalidInput,
                    format!("background size '{a}' is not a positive integer"),
                )
            }),
        _ => fail(
            Exit::InvalidInput,
            format!("baseline '{s}' (expected zeros, class-mean[:SYMBOL] or background[:N])"),
        ),
    }
}

fn explain(args: &ExplainArgs) -> Outcome<()> {
    let net = load_model(&args.model)?;
    let dataset = match &args.dataset {
        Some(p) => {
            let (data, manifest) = load_dataset(p)?;
            check_classes(&net, &data, &args.model, p)?;
            net.check_preprocess_hash(&manifest.preprocess_hash);
            Some((data, manifest))
        }
        None => None,
    };

    let (beat, beat_ref) = match (args.beat_index, &args.record, args.annotation_index) {
        (Some(i), _, _) => {
            let Some((data, _)) = &dataset else {
                return fail(Exit::MissingInput, "--beat-index needs --dataset");
            };
            let Some(seg) = data.validation.get(i) else {
                return fail(
                    Exit::InvalidInput,
                    format!(
                        "beat index {i} out of range ({} validation beats)",
                        data.validation.len()
                    ),
                );
            };
            (seg.samples.clone(), format!("validation:{i}"))
        }
        (None, Some(record), Some(k)) => {
            let hea = if record.ends_with(".hea") {
                PathBuf::from(record)
            } else {
                args.data_dir.join(format!("{record}.hea"))
            };
            let rec = read_wfdb_record(require(&hea)?).or_exit(Exit::InvalidInput)?;
            let ann_path = hea.with_extension(&args.annotation_ext);
            let beats =
                read_wfdb_annotations(require(&ann_path)?, &rec).or_exit(Exit::InvalidInput)?;
            let Some(target) = beats.get(k) else {
                return fail(
                    Exit::InvalidInput,
                    format!(
                        "annotation index {k} out of range ({} beat annotations)",
                        beats.len()
                    ),
                );
            };
            let config = dataset
                .as_ref()
                .map_or_else(PreprocessConfig::default, |(_, m)| m.preprocess.clone());
            let seg = process_record(&rec, std::slice::from_ref(target), &config)
                .or_exit(Exit::InvalidInput)?;
            let Some(s) = seg.segments.into_iter().next() else {
                return fail(
                    Exit::InvalidInput,
                    format!(
                        "beat {k} at sample {} is too close to the record boundary",
                        target.sample_index
                    ),
                );
            };
            (s.samples, format!("{}:{k}", rec.record_id))
        }
        _ => {
            return fail(
                Exit::MissingInput,
                "select a beat with --beat-index or --record and --annotation-index",
            )
        }
    };

    let class = match args.class {
        Some(sym) => match net.class_index.as_ref().and_then(|c| c.index_of(sym)) {
            Some(i) => i,
            None => {
                let known = net
                    .class_index
                    .as_ref()
                    .map_or("none".into(), ToString::to_string);
                return fail(
                    Exit::InvalidInput,
                    format!("class '{sym}' is not one of the model's classes {known}"),
                );
            }
        },
        None => net.predict(&beat).or_exit(Exit::InvalidInput)?.class,
    };

    let baseline = match parse_baseline(&args.baseline)? {
        BaselineSpec::Zeros => Baseline::Zeros,
        spec => {
            let Some((data, _)) = &dataset else {
                return fail(
                    Exit::MissingInput,
                    format!("baseline '{}' needs --dataset", args.baseline),
                );
            };
            match spec {
                BaselineSpec::ClassMean(sym) => {
                    Baseline::class_mean(&data.train, sym).or_exit(Exit::InvalidInput)?
                }
                BaselineSpec::Background(n) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
                    let n = n.min(data.train.len());
                    let mut idx = sample(&mut rng, data.train.len(), n).into_vec();
                    idx.sort_unstable();
                    Baseline::SampleSet {
                        beats: idx.iter().map(|&i| data.train[i].samples.clone()).collect(),
                    }
                }
                BaselineSpec::Zeros => unreachable!(),
            }
        }
    };

    let mut attribution = match args.method {
        Method::Deeplift => {
            let (a, diag) = deeplift_with_diagnostics(&net, &beat, class, &baseline)
                .or_exit(Exit::InvalidInput)?;
            if diag.fallback_fraction() > 0.5 {
                warn!(
                    "DeepLIFT fell back to gradients on {} of {} nonlinear units",
                    diag.fallback_units, diag.nonlinear_units
                );
            }
            a
        }
        Method::Kernel => {
            let cfg = KernelShapConfig {
                group_size: args.group_size,
                num_coalitions: args.coalitions,
                seed: args.seed,
            };
            kernel_shap(&net, &beat, class, &baseline, &cfg).or_exit(Exit::InvalidInput)?
        }
        Method::Gradient => gradient_shap(&net, &beat, class, &baseline, args.samples, args.seed)
            .or_exit(Exit::InvalidInput)?,
        Method::Permutation => {
            let background = baseline
                .references(beat.len())
                .or_exit(Exit::InvalidInput)?;
            let mut a =
                permutation_importance(&net, &beat, class, &background, args.repeats, args.seed)
                    .or_exit(Exit::InvalidInput)?;
            a.baseline = baseline.descriptor();
            a
        }
        Method::Exact => {
            let groups =
                contiguous_groups(beat.len(), args.group_size).or_exit(Exit::InvalidInput)?;
            exact_shapley(&net, &beat, class, &baseline, &groups).or_exit(Exit::InvalidInput)?
        }
    };
    attribution.target_symbol = net.class_index.as_ref().and_then(|c| c.symbol(class));
    attribution.beat_ref = Some(beat_ref.clone());
    attribution.model_checksum = Some(net.checksum());
    attribution.beat = Some(beat);

    output_dir(&args.out_dir)?;
    let stem = format!(
        "{}_{}",
        args.method.name(),
        beat_ref.replace([':', '/'], "_")
    );
    attribution
        .write_json(args.out_dir.join(format!("{stem}.json")))
        .or_exit(Exit::Output)?;
    attribution
        .write_csv(args.out_dir.join(format!("{stem}.csv")))
        .or_exit(Exit::Output)?;
    info!(
        "{} for class {} on {beat_ref}: sum {:.6e}, f(x) - f(baseline) {:.6e} -> {}",
        args.method.name(),
        attribution
            .target_symbol
            .map_or(class.to_string(), String::from),
        attribution.total(),
        attribution.score_input - attribution.score_baseline,
        args.out_dir.join(format!("{stem}.json")).display()
    );
    echo(&args.out_dir, &stem, "explain", args)
}

fn render(args: &RenderArgs) -> Outcome<()> {
    let attribution =
        Attribution::read_json(require(&args.attribution)?).or_exit(Exit::InvalidInput)?;
    let Some(beat) = attribution.beat.as_ref() else {
        return fail(
            Exit::InvalidInput,
            "attribution file carries no beat samples",
        );
    };
    let normalization = match args.normalization.split_once(':') {
        None if args.normalization == "per-beat" => Normalization::PerBeat,
        Some(("global", s)) => match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Normalization::Global(v),
            _ => {
                return fail(
                    Exit::InvalidInput,
                    format!("global scale '{s}' must be a positive number"),
                )
            }
        },
        _ => {
            return fail(
                Exit::InvalidInput,
                format!(
                    "normalization '{}' (expected per-beat or global:<scale>)",
                    args.normalization
                ),
            )
        }
    };
    let style = SaliencyStyle {
        normalization,
        color_scale: if args.signed {
            ColorScale::Signed
        } else {
            ColorScale::Magnitude
        },
        line_width: args.line_width,
        width: args.width,
        height: args.height,
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.attribution.with_extension("svg"));
    output_dir(parent(&out))?;
    let side = render_saliency(beat, &attribution, &style, &out).map_err(|e| match e {
        ecg_xai::viz::VizError::Io { .. } => Failure {
            exit: Exit::Output,
            error: e.into(),
        },
        other => Failure {
            exit: Exit::InvalidInput,
            error: other.into(),
        },
    })?;
    info!(
        "saliency map ({} segments, scale {:.3e}) -> {}",
        side.segments,
        side.scale,
        out.display()
    );
    echo(
        parent(&out),
        &format!("{}.render", file_name(&out)),
        "render",
        args,
    )
}

fn selftest_cmd(args: &SelftestArgs) -> Outcome<()> {
    let results = selftest::run(args.filter.as_deref());
    if results.is_empty() {
        return fail(
            Exit::InvalidInput,
            format!(
                "no check matches; available: {}",
                selftest::check_names().join(", ")
            ),
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    for r in &results {
        println!(
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    println!(
        "{} of {} checks passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        return fail(
            Exit::SelfTestFailed,
            format!("{failed} self-test check(s) failed"),
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match config::merge_into_args(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(Exit::MissingInput as u8);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    let result = match &cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Explain(a) => explain(a),
        Command::Render(a) => render(a),
        Command::Selftest(a) => selftest_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.exit as u8)
        }
    }
}
