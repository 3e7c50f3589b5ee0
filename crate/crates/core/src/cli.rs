//! Command-line front end. [`run`] returns the process exit code: 0 on
//! success, 1 on operational failure, 2 on usage or configuration errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::boosting::{
    train_cascade, Cascade, CascadeConfig, MixedSource, NegativeSource, SceneSampler, WindowSampler,
};
use crate::bpnn::NetworkConfig;
use crate::config::ConfigFile;
use crate::corpus::{generate_corpus, CorpusSpec};
use crate::detector::{detect, format_sig, ScanConfig};
use crate::error::Error;
use crate::haar::WindowSpec;
use crate::image::{GrayImage, Raster, Rect};
use crate::netpbm::{read_gray, write_pgm};
use crate::persist::{self, Model};
use crate::recognizer::{
    evaluate, extract_descriptor, train_on_vectors, DescriptorConfig, FaceRegion, FeatureSource,
    GalleryEntry, Manifest, RecognizerConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "vjbp",
    version,
    about = "Cascade face detection and neural-network face recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic training corpus with annotated scenes
    GenCorpus(GenCorpusArgs),
    /// Train a detection cascade from directories of positive windows and negative images
    TrainDetector(TrainDetectorArgs),
    /// Print one detection line per face found in an image
    Detect(DetectArgs),
    /// Train a recognizer from a gallery manifest
    TrainRecognizer(TrainRecognizerArgs),
    /// Identify the face in an image
    Recognize(RecognizeArgs),
    /// Report accuracy and confusion counts of a recognizer over a gallery
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct GenCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainDetectorArgs {
    #[arg(long)]
    pos: PathBuf,
    #[arg(long)]
    neg: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Annotated scenes (`path x y w h` lines) mined for windows away from the objects
    #[arg(long)]
    scenes: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainRecognizerArgs {
    #[arg(long)]
    gallery: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    restarts: Option<usize>,
    /// Per-epoch MSE of the selected restart as CSV
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cascade used for `auto` gallery entries
    #[arg(long)]
    detector: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RecognizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Face rectangle as `x,y,w,h`; defaults to the whole image
    #[arg(long, value_parser = parse_rect, conflicts_with = "detector")]
    rect: Option<Rect>,
    /// Locate the face with this cascade
    #[arg(long)]
    detector: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    gallery: PathBuf,
    #[arg(long)]
    detector: Option<PathBuf>,
}

fn parse_rect(s: &str) -> Result<Rect, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("expected x,y,w,h with non-negative integers, got `{s}`"))?;
    match parts[..] {
        [x, y, w, h] if w > 0 && h > 0 => Ok(Rect::new(x, y, w, h)),
        _ => Err(format!(
            "expected x,y,w,h with positive width and height, got `{s}`"
        )),
    }
}

enum Failure {
    Usage(String),
    Op(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Op(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

/// Config problems are reported as usage errors.
fn load_config(path: Option<&Path>) -> CliResult<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => ConfigFile::load(p).map_err(|e| match e {
            Error::Io(_) => Failure::Op(e),
            other => Failure::Usage(format!("{}: {other}", p.display())),
        }),
    }
}

fn config_step<T>(path: Option<&Path>, r: crate::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let at = path
            .map(|p| format!("{}: ", p.display()))
            .unwrap_or_default();
        Failure::Usage(format!("{at}{e}"))
    })
}

/// Runs the CLI on `args` (including the program name).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            let code = e.exit_code();
            let sink: &mut dyn Write = if code == 0 { out } else { err };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    let result = match cli.command {
        Command::GenCorpus(a) => gen_corpus(a, out),
        Command::TrainDetector(a) => train_detector(a, out),
        Command::Detect(a) => detect_cmd(a, out),
        Command::TrainRecognizer(a) => train_recognizer_cmd(a, out),
        Command::Recognize(a) => recognize_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
        Err(Failure::Op(e)) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn io_out(r: std::io::Result<()>) -> CliResult {
    r.map_err(|e| Failure::Op(Error::Io(e)))
}

fn gen_corpus(a: GenCorpusArgs, out: &mut dyn Write) -> CliResult {
    let path = a.config.as_deref();
    let mut cfg = load_config(path)?;
    let mut spec = CorpusSpec {
        n_scenes: 200,
        ..CorpusSpec::default()
    };
    config_step(
        path,
        (|| {
            cfg.set("seed", &mut spec.seed)?;
            cfg.set("n_pos", &mut spec.n_pos)?;
            cfg.set("n_neg", &mut spec.n_neg)?;
            cfg.set("n_scenes", &mut spec.n_scenes)?;
            cfg.set("image_size", &mut spec.image_size)?;
            cfg.set("negative_size", &mut spec.negative_size)?;
            cfg.set("scene_size", &mut spec.scene_size)?;
            cfg.set("eye", &mut spec.motif.eye)?;
            cfg.set("face", &mut spec.motif.face)?;
            cfg.set("noise", &mut spec.motif.noise)?;
            cfg.set("jitter", &mut spec.jitter)?;
            std::mem::take(&mut cfg).finish()
        })(),
    )?;
    if spec.image_size == 0
        || spec.negative_size < spec.image_size
        || spec.scene_size < spec.image_size * 7 / 4
    {
        return Err(Failure::Usage(
            "image_size must be positive, and negative_size and scene_size large enough to hold it"
                .into(),
        ));
    }
    if !(0.0..1.0).contains(&spec.jitter) {
        return Err(Failure::Usage(format!(
            "jitter must be in [0, 1), got {}",
            spec.jitter
        )));
    }
    let corpus = generate_corpus(&spec);
    let dirs = ["pos", "neg", "scenes"].map(|d| a.out.join(d));
    for d in &dirs {
        fs::create_dir_all(d).map_err(Error::Io)?;
    }
    for (i, img) in corpus.positives.iter().enumerate() {
        write_pgm(dirs[0].join(format!("{i:05}.pgm")), img)?;
    }
    for (i, img) in corpus.negatives.iter().enumerate() {
        write_pgm(dirs[1].join(format!("{i:05}.pgm")), img)?;
    }
    let mut manifest = String::new();
    for (i, (img, r)) in corpus.scenes.iter().enumerate() {
        let name = format!("{i:05}.pgm");
        write_pgm(dirs[2].join(&name), img)?;
        manifest.push_str(&format!("{name} {} {} {} {}\n", r.x, r.y, r.w, r.h));
    }
    fs::write(dirs[2].join("manifest.txt"), manifest).map_err(Error::Io)?;
    io_out(writeln!(
        out,
        "wrote {} positives, {} negatives, {} scenes to {}",
        corpus.positives.len(),
        corpus.negatives.len(),
        corpus.scenes.len(),
        a.out.display()
    ))
}

/// Netpbm files of a directory in name order.
fn read_image_dir(dir: &Path) -> CliResult<Vec<GrayImage>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::Io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm")))
        .collect();
    paths.sort();
    paths.iter().map(|p| Ok(read_gray(p)?)).collect()
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// `path x y w h` lines, several lines may name the same image.
fn read_scene_manifest(path: &Path) -> CliResult<Vec<(GrayImage, Vec<Rect>)>> {
    let text = fs::read_to_string(path).map_err(Error::Io)?;
    let base = parent_dir(path);
    let mut scenes: Vec<(String, Vec<Rect>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let nums: Option<Vec<usize>> = toks
            .get(1..)
            .map(|t| t.iter().filter_map(|v| v.parse().ok()).collect());
        let rect = match (toks.len(), nums.as_deref()) {
            (5, Some(&[x, y, w, h])) => Rect::new(x, y, w, h),
            _ => {
                return Err(Failure::Op(Error::malformed(
                    i + 1,
                    "expected `path x y w h`",
                )))
            }
        };
        match scenes.iter_mut().find(|(p, _)| p == toks[0]) {
            Some((_, rects)) => rects.push(rect),
            None => scenes.push((toks[0].to_string(), vec![rect])),
        }
    }
    scenes
        .into_iter()
        .map(|(p, rects)| Ok((read_gray(resolve(&base, &p))?, rects)))
        .collect()
}

fn train_detector(a: TrainDetectorArgs, out: &mut dyn Write) -> CliResult {
    let path = a.config.as_deref();
    let mut cfg = load_config(path)?;
    let mut c = CascadeConfig::default();
    let mut base = WindowSpec::default().base_size();
    let mut scene_max_iou = 0.5f64;
    let mut scene_weight = 1.0f64;
    config_step(
        path,
        (|| {
            cfg.set("base", &mut base)?;
            cfg.set("per_stage_tpr", &mut c.per_stage_tpr)?;
            cfg.set("per_stage_fpr", &mut c.per_stage_fpr)?;
            cfg.set("overall_fpr", &mut c.overall_fpr_target)?;
            cfg.set("max_stages", &mut c.max_stages)?;
            cfg.set("max_weaks", &mut c.max_weaks_per_stage)?;
            cfg.set("negatives_per_stage", &mut c.negatives_per_stage)?;
            cfg.set("validation_negatives", &mut c.validation_negatives)?;
            cfg.set("max_mining_draws", &mut c.max_mining_draws)?;
            cfg.set("seed", &mut c.seed)?;
            cfg.set("precompute_budget", &mut c.precompute_budget)?;
            cfg.set("execution", &mut c.execution)?;
            cfg.set("scene_max_iou", &mut scene_max_iou)?;
            cfg.set("scene_weight", &mut scene_weight)?;
            std::mem::take(&mut cfg).finish()?;
            c.validate()
        })(),
    )?;
    let window = config_step(path, WindowSpec::new(base))?;
    if !(0.0..1.0).contains(&scene_max_iou) || !(scene_weight >= 0.0) {
        return Err(Failure::Usage(
            "scene_max_iou must be in [0, 1) and scene_weight >= 0".into(),
        ));
    }

    let positives: Vec<GrayImage> = read_image_dir(&a.pos)?
        .into_iter()
        .map(|p| {
            if p.width() == base && p.height() == base {
                p
            } else {
                p.resize_area(base, base)
            }
        })
        .collect();
    let negatives = read_image_dir(&a.neg)?;
    let backgrounds = WindowSampler::new(negatives, base, c.seed);
    let mut source: Box<dyn NegativeSource> = match &a.scenes {
        Some(m) if scene_weight > 0.0 => {
            let scenes = SceneSampler::new(read_scene_manifest(m)?, base, scene_max_iou, c.seed);
            Box::new(MixedSource::new(vec![
                (Box::new(backgrounds), 1.0),
                (Box::new(scenes), scene_weight),
            ]))
        }
        _ => Box::new(backgrounds),
    };
    let cascade = train_cascade(&positives, source.as_mut(), window, &c)?;
    persist::save_model(&Model::Cascade(cascade.clone()), &a.out)?;
    for (k, (stage, meta)) in cascade
        .stages()
        .iter()
        .zip(&cascade.meta().stages)
        .enumerate()
    {
        io_out(writeln!(
            out,
            "stage {k} weaks {} tpr {} fpr {} negatives {}",
            stage.weaks.len(),
            format_sig(meta.tpr, 6),
            format_sig(meta.fpr, 6),
            meta.negatives
        ))?;
    }
    io_out(writeln!(out, "stop {}", cascade.meta().stop))
}

fn scan_config(path: Option<&Path>) -> CliResult<ScanConfig> {
    let mut cfg = load_config(path)?;
    let mut s = ScanConfig::default();
    config_step(
        path,
        (|| {
            cfg.set("scale_start", &mut s.scale_start)?;
            cfg.set("scale_factor", &mut s.scale_factor)?;
            cfg.set("stride_fraction", &mut s.stride_fraction)?;
            cfg.set("nms_iou", &mut s.nms_iou)?;
            cfg.set("execution", &mut s.execution)?;
            std::mem::take(&mut cfg).finish()?;
            s.validate()
        })(),
    )?;
    Ok(s)
}

fn detect_cmd(a: DetectArgs, out: &mut dyn Write) -> CliResult {
    let scan = scan_config(a.config.as_deref())?;
    let Format::Text = a.format;
    let cascade = persist::load_cascade(&a.model)?;
    let img = read_gray(&a.image)?;
    for d in detect(&cascade, &img, &scan)? {
        io_out(writeln!(out, "{d}"))?;
    }
    Ok(())
}

/// Highest-scoring face, or an error when the cascade finds none.
fn locate_face(cascade: &Cascade, img: &GrayImage, what: &str) -> CliResult<Rect> {
    detect(cascade, img, &ScanConfig::default())?
        .first()
        .map(|d| d.rect)
        .ok_or_else(|| Failure::Op(Error::Format(format!("no face detected in {what}"))))
}

/// Raw feature vectors and labels for every gallery entry.
fn gallery_vectors(
    manifest_path: &Path,
    manifest: &Manifest,
    source: &FeatureSource,
    detector: Option<&Cascade>,
) -> CliResult<Vec<(Vec<f64>, String)>> {
    let base = parent_dir(manifest_path);
    manifest
        .entries
        .iter()
        .map(|e| match (e, source) {
            (GalleryEntry::Vector { label, values }, FeatureSource::Vector { dim }) => {
                if values.len() != *dim {
                    return Err(Failure::Op(Error::Dimension(format!(
                        "vector for `{label}` has {} values, expected {dim}",
                        values.len()
                    ))));
                }
                Ok((values.clone(), label.clone()))
            }
            (
                GalleryEntry::Image {
                    path,
                    region,
                    label,
                },
                FeatureSource::Image(desc),
            ) => {
                let img = read_gray(resolve(&base, path))?;
                let rect = match region {
                    FaceRegion::Rect(r) => *r,
                    FaceRegion::Auto => {
                        let c = detector.ok_or_else(|| {
                            Failure::Usage(format!("`{path} auto` needs --detector"))
                        })?;
                        locate_face(c, &img, path)?
                    }
                };
                Ok((extract_descriptor(&img, rect, desc)?, label.clone()))
            }
            _ => Err(Failure::Op(Error::Config(
                "gallery sample kind does not match the model's feature source".into(),
            ))),
        })
        .collect()
}

fn load_detector(path: Option<&Path>) -> CliResult<Option<Cascade>> {
    Ok(match path {
        Some(p) => Some(persist::load_cascade(p)?),
        None => None,
    })
}

fn train_recognizer_cmd(a: TrainRecognizerArgs, out: &mut dyn Write) -> CliResult {
    let path = a.config.as_deref();
    let mut cfg = load_config(path)?;
    let mut rc = RecognizerConfig::default();
    let mut desc = DescriptorConfig::default();
    config_step(
        path,
        (|| {
            cfg.set("hidden", &mut rc.hidden)?;
            cfg.set("restarts", &mut rc.restarts)?;
            cfg.set("accept_threshold", &mut rc.accept_threshold)?;
            cfg.set("learning_rate", &mut rc.network.learning_rate)?;
            cfg.set("max_epochs", &mut rc.network.max_epochs)?;
            cfg.set("val_fail_limit", &mut rc.network.val_fail_limit)?;
            cfg.set("goal_mse", &mut rc.network.goal_mse)?;
            cfg.set("seed", &mut rc.network.seed)?;
            if let Some(v) = cfg.take_list::<f64>("split")? {
                let [t, v, s] = v[..] else {
                    return Err(Error::Config("`split` takes three ratios".into()));
                };
                rc.ratios = (t, v, s);
            }
            cfg.set("crop_size", &mut desc.crop_size)?;
            if let Some(g) = cfg.take_list::<usize>("grid")? {
                let [r, c] = g[..] else {
                    return Err(Error::Config("`grid` takes rows,cols".into()));
                };
                desc.grid = (r, c);
            }
            cfg.set("bins", &mut desc.bins_per_cell)?;
            cfg.set("mode", &mut desc.mode)?;
            cfg.set("execution", &mut rc.execution)?;
            std::mem::take(&mut cfg).finish()?;
            desc.validate()?;
            NetworkConfig {
                n_in: 1,
                n_hidden: rc.hidden,
                n_out: 1,
                ..rc.network.clone()
            }
            .validate()
        })(),
    )?;
    if let Some(r) = a.restarts {
        rc.restarts = r;
    }
    let text = fs::read_to_string(&a.gallery).map_err(Error::Io)?;
    let manifest = Manifest::parse(&text)?;
    if manifest.entries.is_empty() {
        return Err(Failure::Op(Error::InsufficientIdentities(0)));
    }
    let source = match &manifest.entries[0] {
        GalleryEntry::Vector { values, .. } => FeatureSource::Vector { dim: values.len() },
        GalleryEntry::Image { .. } => FeatureSource::Image(desc),
    };
    let detector = load_detector(a.detector.as_deref())?;
    let samples = gallery_vectors(&a.gallery, &manifest, &source, detector.as_ref())?;
    let outcome = train_on_vectors(&samples, source, manifest.codebook()?, &rc)?;
    persist::save_model(&Model::Recognizer(outcome.model.clone()), &a.out)?;
    if let Some(p) = &a.report {
        fs::write(p, outcome.report().to_csv()).map_err(Error::Io)?;
    }
    for run in &outcome.runs {
        io_out(writeln!(
            out,
            "restart seed {} epochs {} stop {} score {}",
            run.seed,
            run.report.epochs_run,
            run.report.stop_reason.name(),
            format_sig(run.score, 6)
        ))?;
    }
    io_out(writeln!(
        out,
        "selected seed {}",
        outcome.runs[outcome.selected].seed
    ))
}

fn recognize_cmd(a: RecognizeArgs, out: &mut dyn Write) -> CliResult {
    let model = persist::load_recognizer(&a.model)?;
    let img = read_gray(&a.image)?;
    let rect = match (&a.rect, load_detector(a.detector.as_deref())?) {
        (Some(r), _) => *r,
        (None, Some(c)) => locate_face(&c, &img, &a.image.display().to_string())?,
        (None, None) => Rect::new(0, 0, img.width(), img.height()),
    };
    let r = model.recognize(&img, rect)?;
    io_out(writeln!(out, "{r}"))
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> CliResult {
    let model = persist::load_recognizer(&a.model)?;
    let text = fs::read_to_string(&a.gallery).map_err(Error::Io)?;
    let manifest = Manifest::parse(&text)?;
    let detector = load_detector(a.detector.as_deref())?;
    let samples = gallery_vectors(&a.gallery, &manifest, &model.source, detector.as_ref())?;
    let report = evaluate(&model, &samples)?;
    io_out(write!(out, "{report}"))
}
