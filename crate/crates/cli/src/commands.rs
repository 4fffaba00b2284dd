use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use entroprog::attention::{AttentionTrainHistory, GatedAttention};
use entroprog::beqrnn::{QuantileNetwork, Refiner, TrainHistory};
use entroprog::nn::Checkpoint;
use entroprog::pipeline::{
    evaluate_outputs, extract_features, part_indices, predict_all, resume_stage1, run_snn, run_stage1, run_stage2,
    Models, RunConfig, SegmentFeatures, SegmentOutput, SnnArtifacts, Stage1Artifacts, Stage2Artifacts, Standardizer,
};
use entroprog::prognostics::{capacity_plan, BaselineModel, SegmentRecord, TransitionAlert};
use entroprog::snn::{write_scores_csv, SnnNetwork, SnnTrainHistory};
use entroprog::stpe::{EntropyFeatureVector, EntropyField};
use entroprog::synth::{make_transition_dataset, LabeledDataset, SplitPart};
use entroprog::Error;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::json;

use crate::fail::{CliError, CliResult};
use crate::manifest::{list_files, ManifestBuilder, MANIFEST_FILE};
use crate::{PartArg, Stage};

pub struct Context {
    pub cfg: RunConfig,
    pub cfg_toml: String,
    pub out: PathBuf,
}

impl Context {
    pub fn load(config: Option<&Path>, seed: Option<u64>, out: PathBuf) -> CliResult<Self> {
        let mut cfg = match config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                RunConfig::from_toml(&text).map_err(|e| CliError::validation(e.to_string()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        let cfg = cfg.resolved();
        let cfg_toml = cfg.to_toml()?;
        Ok(Self { cfg, cfg_toml, out })
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&self, given: Option<PathBuf>, name: &str) -> PathBuf {
        given.unwrap_or_else(|| self.dir(name))
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Removes earlier outputs of this command so stale files are not hashed.
fn clear_prefixed(dir: &Path, prefixes: &[&str]) -> CliResult<()> {
    let Ok(entries) = fs::read_dir(dir) else { return Ok(()) };
    for e in entries.flatten() {
        let p = e.path();
        let name = e.file_name().to_string_lossy().into_owned();
        if p.is_file() && prefixes.iter().any(|pre| name.starts_with(pre)) {
            fs::remove_file(&p).map_err(|err| CliError::io(&p, err))?;
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::data(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?))
}

fn write_checkpoint(path: &Path, c: &Checkpoint) -> CliResult<()> {
    let mut w = create(path)?;
    c.write(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Ok(Checkpoint::read(open(path)?)?)
}

fn load_dataset(dir: &Path) -> CliResult<LabeledDataset> {
    if !dir.join("manifest.json").is_file() {
        return Err(CliError::data(format!("no dataset at {}", dir.display())));
    }
    Ok(LabeledDataset::read_dir(dir)?)
}

fn features_file(k: usize) -> String {
    format!("features_{k:04}.csv")
}

fn field_file(k: usize) -> String {
    format!("field_{k:04}.csv")
}

fn load_features(dir: &Path, ds: &LabeledDataset) -> CliResult<Vec<SegmentFeatures>> {
    (0..ds.segments.len())
        .map(|k| {
            let rows = EntropyFeatureVector::read_csv(open(&dir.join(features_file(k)))?)?;
            let field = EntropyField::read_csv(open(&dir.join(field_file(k)))?, ds.config.width, ds.config.height)?;
            Ok(SegmentFeatures {
                rows,
                field,
                undersampled: false,
            })
        })
        .collect()
}

pub fn generate(ctx: &Context) -> CliResult<()> {
    let t0 = Instant::now();
    let d = &ctx.cfg.data;
    let ds = make_transition_dataset(&d.normal, &d.abnormal, &d.transition)?;
    let gen_ms = ms(t0);
    let dir = ctx.dir("dataset");
    create_dir(&dir)?;
    clear_prefixed(&dir, &["segment_"])?;
    let t1 = Instant::now();
    ds.write_dir(&dir)?;
    write_text(&dir.join("config.toml"), &ctx.cfg_toml)?;
    let mut m = ManifestBuilder::new("generate", &ctx.cfg_toml);
    let split = ds.config.split;
    m.details(json!({
        "n_segments": ds.segments.len(),
        "n_steps": ds.config.n_steps,
        "width": ds.config.width,
        "height": ds.config.height,
        "split": [split.train, split.val, split.test],
        "n_transitions": ds.segments.iter().filter(|s| s.transition_step.is_some()).count(),
    }));
    m.timing("generate", gen_ms);
    m.timing("write", ms(t1));
    m.finish(&dir, &list_files(&dir)?, MANIFEST_FILE)?;
    println!("dataset: {} segments -> {}", ds.segments.len(), dir.display());
    Ok(())
}

pub fn features(ctx: &Context, dataset: Option<PathBuf>) -> CliResult<()> {
    let ds_dir = ctx.input(dataset, "dataset");
    let ds = load_dataset(&ds_dir)?;
    let t0 = Instant::now();
    let feats = extract_features(&ds, &ctx.cfg.features)?;
    let extract_ms = ms(t0);
    let dir = ctx.dir("features");
    create_dir(&dir)?;
    clear_prefixed(&dir, &["features_", "field_"])?;
    let mut m = ManifestBuilder::new("features", &ctx.cfg_toml);
    m.input_dir("dataset", &ds_dir)?;
    for (k, f) in feats.iter().enumerate() {
        let mut w = create(&dir.join(features_file(k)))?;
        EntropyFeatureVector::write_csv(&f.rows, &mut w)?;
        w.flush().map_err(|e| CliError::io(&dir, e))?;
        let mut w = create(&dir.join(field_file(k)))?;
        f.field.write_csv(&mut w)?;
        w.flush().map_err(|e| CliError::io(&dir, e))?;
        if f.undersampled {
            m.warn(format!("segment {k}: entropy windows hold fewer samples than the pattern alphabet"));
        }
    }
    write_text(&dir.join("config.toml"), &ctx.cfg_toml)?;
    m.details(json!({
        "n_segments": feats.len(),
        "columns": 1 + entroprog::stpe::FEATURE_COUNT,
        "recipe_version": entroprog::stpe::RECIPE_VERSION,
    }));
    m.timing("extract", extract_ms);
    m.finish(&dir, &list_files(&dir)?, MANIFEST_FILE)?;
    println!("features: {} segments -> {}", feats.len(), dir.display());
    Ok(())
}

const STAGE1_FILES: [&str; 4] = ["stage1.ckpt", "standardizer.json", "baseline.json", "stage1_history.csv"];
const STAGE2_FILES: [&str; 2] = ["attention.ckpt", "refiner.ckpt"];
const SNN_FILES: [&str; 1] = ["snn.ckpt"];

fn require(dir: &Path, files: &[&str], what: &str) -> CliResult<()> {
    if let Some(f) = files.iter().find(|f| !dir.join(f).is_file()) {
        return Err(Error::Ordering(format!("{what}; missing {}", dir.join(f).display())).into());
    }
    Ok(())
}

fn load_stage1(dir: &Path) -> CliResult<Stage1Artifacts> {
    Ok(Stage1Artifacts {
        net: QuantileNetwork::from_checkpoint(&read_checkpoint(&dir.join("stage1.ckpt"))?)?,
        standardizer: read_json::<Standardizer>(&dir.join("standardizer.json"))?,
        baseline: read_json::<BaselineModel>(&dir.join("baseline.json"))?,
        history: TrainHistory::read_csv(open(&dir.join("stage1_history.csv"))?)?,
    })
}

fn load_stage2(dir: &Path) -> CliResult<Stage2Artifacts> {
    Ok(Stage2Artifacts {
        attention: GatedAttention::from_checkpoint(&read_checkpoint(&dir.join("attention.ckpt"))?)?,
        refiner: Refiner::from_checkpoint(&read_checkpoint(&dir.join("refiner.ckpt"))?)?,
        attention_history: AttentionTrainHistory::default(),
        refine_history: TrainHistory::default(),
    })
}

fn load_snn(dir: &Path) -> CliResult<SnnArtifacts> {
    Ok(SnnArtifacts {
        net: SnnNetwork::from_checkpoint(&read_checkpoint(&dir.join("snn.ckpt"))?)?,
        history: SnnTrainHistory::default(),
    })
}

fn write_attention_history(path: &Path, h: &AttentionTrainHistory) -> CliResult<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "epoch,loss_train,loss_val").map_err(io)?;
    for (e, tr, va) in &h.records {
        writeln!(w, "{e},{tr},{va}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn train(
    ctx: &Context,
    stage: Stage,
    dataset: Option<PathBuf>,
    features: Option<PathBuf>,
    epochs: Option<usize>,
    resume: bool,
) -> CliResult<()> {
    let dir = ctx.dir("models");
    if resume && stage != Stage::One {
        return Err(CliError::validation("--resume is supported for stage 1 only"));
    }
    // ordering is checked before any data is read
    match stage {
        Stage::One if resume => require(&dir, &STAGE1_FILES, "resuming needs a stage 1 run")?,
        Stage::One => {}
        Stage::Two => require(&dir, &STAGE1_FILES, "stage 2 runs after stage 1")?,
        Stage::Snn => {
            require(&dir, &STAGE1_FILES, "stage snn runs after stage 1")?;
            require(&dir, &STAGE2_FILES, "stage snn runs after stage 2")?;
        }
    }
    let ds_dir = ctx.input(dataset, "dataset");
    let feat_dir = ctx.input(features, "features");
    let ds = load_dataset(&ds_dir)?;
    let feats = load_features(&feat_dir, &ds)?;
    create_dir(&dir)?;
    let mut cfg = ctx.cfg.clone();
    let tag = match stage {
        Stage::One => "stage1",
        Stage::Two => "stage2",
        Stage::Snn => "snn",
    };
    let mut m = ManifestBuilder::new(&format!("train {tag}"), &ctx.cfg_toml);
    m.input_dir("dataset", &ds_dir)?;
    m.input_dir("features", &feat_dir)?;
    let t0 = Instant::now();
    let written: Vec<&str> = match stage {
        Stage::One => {
            if let Some(e) = epochs {
                cfg.stage1.train.epochs = e;
            }
            let s1 = if resume {
                for f in STAGE1_FILES {
                    m.input_file("models", &dir.join(f))?;
                }
                let prev = load_stage1(&dir)?;
                let start = prev.history.records.last().map_or(0, |r| r.epoch + 1);
                let mut s1 = resume_stage1(&cfg, &ds, &feats, prev.net, start)?;
                let mut records = prev.history.records;
                records.extend(s1.history.records);
                s1.history = TrainHistory {
                    best_epoch: records
                        .iter()
                        .min_by(|a, b| a.loss_val.total_cmp(&b.loss_val))
                        .map_or(0, |r| r.epoch),
                    stopped_early: s1.history.stopped_early,
                    records,
                };
                s1
            } else {
                run_stage1(&cfg, &ds, &feats)?
            };
            write_checkpoint(&dir.join("stage1.ckpt"), &s1.net.to_checkpoint())?;
            write_json(&dir.join("standardizer.json"), &s1.standardizer)?;
            write_json(&dir.join("baseline.json"), &s1.baseline)?;
            let mut w = create(&dir.join("stage1_history.csv"))?;
            s1.history.write_csv(&mut w)?;
            w.flush().map_err(|e| CliError::io(&dir, e))?;
            m.details(json!({
                "stage": "1",
                "epochs_run": s1.history.records.len(),
                "last_epoch": s1.history.records.last().map(|r| r.epoch),
                "best_epoch": s1.history.best_epoch,
                "baseline_degenerate": s1.baseline.degenerate,
            }));
            STAGE1_FILES.to_vec()
        }
        Stage::Two => {
            if let Some(e) = epochs {
                cfg.stage2.attention_train.epochs = e;
                cfg.stage2.refine.epochs = e;
            }
            for f in STAGE1_FILES {
                m.input_file("models", &dir.join(f))?;
            }
            let s1 = load_stage1(&dir)?;
            let s2 = run_stage2(&cfg, &ds, &feats, &s1)?;
            write_checkpoint(&dir.join("attention.ckpt"), &s2.attention.to_checkpoint())?;
            write_checkpoint(&dir.join("refiner.ckpt"), &s2.refiner.to_checkpoint())?;
            write_attention_history(&dir.join("attention_history.csv"), &s2.attention_history)?;
            let mut w = create(&dir.join("refine_history.csv"))?;
            s2.refine_history.write_csv(&mut w)?;
            w.flush().map_err(|e| CliError::io(&dir, e))?;
            m.details(json!({
                "stage": "2",
                "attention_epochs": s2.attention_history.records.len(),
                "refine_epochs": s2.refine_history.records.len(),
            }));
            vec!["attention.ckpt", "refiner.ckpt", "attention_history.csv", "refine_history.csv"]
        }
        Stage::Snn => {
            if let Some(e) = epochs {
                cfg.snn.train.epochs = e;
            }
            for f in STAGE1_FILES.iter().chain(&STAGE2_FILES) {
                m.input_file("models", &dir.join(f))?;
            }
            let s1 = load_stage1(&dir)?;
            let s2 = load_stage2(&dir)?;
            let snn = run_snn(&cfg, &ds, &feats, &s1, &s2)?;
            write_checkpoint(&dir.join("snn.ckpt"), &snn.net.to_checkpoint())?;
            let mut w = create(&dir.join("snn_history.csv"))?;
            snn.history.write_csv(&mut w)?;
            w.flush().map_err(|e| CliError::io(&dir, e))?;
            m.details(json!({
                "stage": "snn",
                "epochs_run": snn.history.records.len(),
                "final_accuracy": snn.history.records.last().map(|r| r.accuracy),
            }));
            vec!["snn.ckpt", "snn_history.csv"]
        }
    };
    m.timing("train", ms(t0));
    let snapshot = format!("config_{tag}.toml");
    write_text(&dir.join(&snapshot), &ctx.cfg_toml)?;
    let mut outputs: Vec<PathBuf> = written.iter().map(PathBuf::from).collect();
    outputs.push(PathBuf::from(&snapshot));
    m.finish(&dir, &outputs, &format!("run_manifest_{tag}.json"))?;
    println!("train {tag}: -> {}", dir.display());
    Ok(())
}

/// Contents of `predictions.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub horizon_steps: usize,
    pub segments: Vec<SegmentOutput>,
}

#[derive(Serialize)]
struct AlertRow<'a> {
    segment: usize,
    #[serde(flatten)]
    alert: &'a TransitionAlert,
}

pub fn predict(
    ctx: &Context,
    dataset: Option<PathBuf>,
    features: Option<PathBuf>,
    models: Option<PathBuf>,
    horizon: Option<usize>,
    part: Option<PartArg>,
    snapshot_steps: &[usize],
) -> CliResult<()> {
    let model_dir = ctx.input(models, "models");
    require(&model_dir, &STAGE1_FILES, "predict needs trained models")?;
    require(&model_dir, &STAGE2_FILES, "predict needs trained models")?;
    require(&model_dir, &SNN_FILES, "predict needs trained models")?;
    let ds_dir = ctx.input(dataset, "dataset");
    let feat_dir = ctx.input(features, "features");
    let ds = load_dataset(&ds_dir)?;
    let mut cfg = ctx.cfg.clone();
    if let Some(h) = horizon {
        cfg.alerts.horizon_steps = h;
    }
    let h = cfg.alerts.horizon_steps;
    if h == 0 {
        return Err(CliError::validation("horizon must be at least one step"));
    }
    if h >= ds.config.n_steps {
        return Err(Error::insufficient("history for the requested horizon", h + 1, ds.config.n_steps).into());
    }
    if let Some(&t) = snapshot_steps.iter().find(|&&t| t >= ds.config.n_steps) {
        return Err(CliError::validation(format!("snapshot step {t} beyond the {} recorded steps", ds.config.n_steps)));
    }
    let feats = load_features(&feat_dir, &ds)?;
    let t_load = Instant::now();
    let m_models = Models {
        stage1: load_stage1(&model_dir)?,
        stage2: load_stage2(&model_dir)?,
        snn: load_snn(&model_dir)?,
    };
    let load_ms = ms(t_load);
    let which: Vec<usize> = match part {
        Some(PartArg::All) => (0..ds.segments.len()).collect(),
        Some(PartArg::Train) => part_indices(&ds, SplitPart::Train),
        Some(PartArg::Val) => part_indices(&ds, SplitPart::Val),
        Some(PartArg::Test) => part_indices(&ds, SplitPart::Test),
        None => part_indices(&ds, cfg.eval_part),
    };
    if which.is_empty() {
        return Err(CliError::data("no segments in the selected split"));
    }
    let t0 = Instant::now();
    let outputs = predict_all(&cfg, &m_models, &feats, &which)?;
    let predict_ms = ms(t0);

    let dir = ctx.dir("predictions");
    let snap_dir = dir.join("snapshots");
    create_dir(&snap_dir)?;
    clear_prefixed(&dir, &["scores_", "risk_"])?;
    clear_prefixed(&snap_dir, &["grid_"])?;
    let t1 = Instant::now();
    let mut alert_rows = Vec::new();
    for o in &outputs {
        let k = o.segment;
        write_scores_csv(&dir.join(format!("scores_{k:04}.csv")), &o.scores)?;
        let path = dir.join(format!("risk_{k:04}.csv"));
        let mut w = create(&path)?;
        let io = |e| CliError::io(&path, e);
        writeln!(w, "t,P,overflow,ptf").map_err(io)?;
        for r in &o.risk {
            writeln!(w, "{},{},{},{}", r.t, r.value, r.overflow as u8, r.ptf).map_err(io)?;
        }
        w.flush().map_err(io)?;
        let grid = ds.segments[k].grid();
        let mut steps: Vec<usize> = o.alerts.iter().map(|a| a.t_trigger).collect();
        steps.extend_from_slice(snapshot_steps);
        steps.push(ds.config.n_steps - 1);
        steps.sort_unstable();
        steps.dedup();
        for t in steps {
            let path = snap_dir.join(format!("grid_{k:04}_t{t:05}.csv"));
            let mut w = create(&path)?;
            let io = |e| CliError::io(&path, e);
            writeln!(w, "i,j,amplitude").map_err(io)?;
            for i in 0..grid.width() {
                for j in 0..grid.height() {
                    writeln!(w, "{i},{j},{}", grid.get(t, i, j)).map_err(io)?;
                }
            }
            w.flush().map_err(io)?;
        }
        alert_rows.extend(o.alerts.iter().map(|alert| AlertRow { segment: k, alert }));
    }
    write_json(&dir.join("alerts.json"), &alert_rows)?;
    let n_alerts = alert_rows.len();
    drop(alert_rows);
    let set = PredictionSet {
        horizon_steps: h,
        segments: outputs,
    };
    write_json(&dir.join("predictions.json"), &set)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml()?)?;

    let mut m = ManifestBuilder::new("predict", &ctx.cfg_toml);
    m.input_dir("dataset", &ds_dir)?;
    m.input_dir("features", &feat_dir)?;
    for f in STAGE1_FILES.iter().chain(&STAGE2_FILES).chain(&SNN_FILES) {
        m.input_file("models", &model_dir.join(f))?;
    }
    m.details(json!({
        "horizon_steps": h,
        "segments": which,
        "n_alerts": n_alerts,
    }));
    m.timing("load_models", load_ms);
    m.timing("predict", predict_ms);
    m.timing("write", ms(t1));
    m.finish(&dir, &list_files(&dir)?, MANIFEST_FILE)?;
    println!("predict: {} segments, {} alerts -> {}", which.len(), n_alerts, dir.display());
    Ok(())
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub accuracy: f64,
    pub fpr: f64,
    pub detection_rate: f64,
    pub mean_lead_time: Option<f64>,
    pub segments: Vec<SegmentRecord>,
}

fn summary_table(r: &ReportDoc, horizon: usize) -> String {
    let mut s = String::new();
    s.push_str(&format!("{:<16} {:>10}\n", "metric", "value"));
    s.push_str(&format!("{:<16} {:>10.4}\n", "accuracy", r.accuracy));
    s.push_str(&format!("{:<16} {:>10.4}\n", "fpr", r.fpr));
    s.push_str(&format!("{:<16} {:>10.4}\n", "detection_rate", r.detection_rate));
    let lead = r.mean_lead_time.map_or("n/a".to_string(), |v| format!("{v:.2}"));
    s.push_str(&format!("{:<16} {:>10}\n", "mean_lead_time", lead));
    s.push_str(&format!("{:<16} {:>10}\n\n", "horizon_steps", horizon));
    s.push_str(&format!(
        "{:>7} {:>10} {:>7} {:>9} {:>6} {:>12} {:>9}\n",
        "segment", "transition", "alerts", "detected", "lead", "false_alarm", "step_acc"
    ));
    for g in &r.segments {
        let opt = |v: Option<usize>| v.map_or("-".to_string(), |x| x.to_string());
        s.push_str(&format!(
            "{:>7} {:>10} {:>7} {:>9} {:>6} {:>12} {:>9}\n",
            g.segment,
            opt(g.transition_step),
            g.n_alerts,
            g.detected,
            opt(g.lead_time_steps),
            g.false_alarm,
            g.step_accuracy.map_or("-".to_string(), |a| format!("{a:.4}")),
        ));
    }
    s
}

pub fn evaluate(ctx: &Context, dataset: Option<PathBuf>, predictions: Option<PathBuf>) -> CliResult<()> {
    let ds_dir = ctx.input(dataset, "dataset");
    let pred_dir = ctx.input(predictions, "predictions");
    let ds = load_dataset(&ds_dir)?;
    let pred_file = pred_dir.join("predictions.json");
    let set: PredictionSet = read_json(&pred_file)?;
    let mut seen = vec![false; ds.segments.len()];
    for o in &set.segments {
        match seen.get_mut(o.segment) {
            Some(s) if !*s => *s = true,
            Some(_) => return Err(CliError::data(format!("segment {} predicted twice", o.segment))),
            None => {
                return Err(CliError::data(format!(
                    "predictions name segment {} but the dataset holds {}",
                    o.segment,
                    ds.segments.len()
                )))
            }
        }
        if o.scores.iter().any(|(t, _)| *t >= ds.config.n_steps) {
            return Err(CliError::data(format!("segment {} scores steps past the dataset length", o.segment)));
        }
    }
    let t0 = Instant::now();
    let r = evaluate_outputs(&ds, &set.segments, set.horizon_steps)?;
    let doc = ReportDoc {
        accuracy: r.accuracy,
        fpr: r.false_positive_rate,
        detection_rate: r.detection_rate_within_window,
        mean_lead_time: r.mean_lead_time_steps,
        segments: r.segments,
    };
    let dir = ctx.dir("report");
    create_dir(&dir)?;
    write_json(&dir.join("report.json"), &doc)?;
    let table = summary_table(&doc, set.horizon_steps);
    write_text(&dir.join("summary.txt"), &table)?;
    write_text(&dir.join("config.toml"), &ctx.cfg_toml)?;
    let mut m = ManifestBuilder::new("evaluate", &ctx.cfg_toml);
    m.input_dir("dataset", &ds_dir)?;
    m.input_file("predictions", &pred_file)?;
    m.details(json!({ "n_segments": doc.segments.len(), "horizon_steps": set.horizon_steps }));
    m.timing("evaluate", ms(t0));
    m.finish(&dir, &list_files(&dir)?, MANIFEST_FILE)?;
    print!("{table}");
    Ok(())
}

pub fn capacity(
    ctx: &Context,
    t_single_ms: Option<f64>,
    machines: Option<usize>,
    cores: Option<usize>,
    n_max: Option<usize>,
) -> CliResult<()> {
    let c = &ctx.cfg.capacity;
    let t = t_single_ms.unwrap_or(c.t_single_ms);
    let machines = machines.unwrap_or(c.machines);
    let cores = cores.unwrap_or(c.cores);
    let n_max = n_max.unwrap_or(c.n_max);
    let plan = capacity_plan(t, machines, cores, n_max)?;
    let dir = ctx.dir("capacity");
    create_dir(&dir)?;
    let doc = json!({
        "t_single_ms": t,
        "machines": machines,
        "cores": cores,
        "n_max": n_max,
        "machines_per_unit": plan.machines_per_unit,
        "latency_ms": plan.latency_ms,
        "units": plan.units,
    });
    write_json(&dir.join("plan.json"), &doc)?;
    let m = ManifestBuilder::new("capacity", &ctx.cfg_toml);
    m.finish(&dir, &[PathBuf::from("plan.json")], MANIFEST_FILE)?;
    println!(
        "latency {:.1} ms per machine, {} machines per unit, {} units",
        plan.latency_ms, plan.machines_per_unit, plan.units
    );
    Ok(())
}
