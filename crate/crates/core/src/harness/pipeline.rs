//! The three training steps and the final evaluation, each persisted in a
//! run directory and skipped on re-runs when its checkpoint is current.
//!
//! ```text
//! <run>/config.json
//! <run>/step1/model.ckpt         log.csv  [rica_manifest.csv]
//! <run>/step2/<position>/bundle.ckpt  loss.csv
//! <run>/step3/<position>/model.ckpt   log.csv  [rica_manifest.csv]
//! <run>/reports/summary.csv      <model>_source.csv  <model>_target.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::checkpoint::{config_hash, Checkpoint};
use super::config::{DataConfig, DataSpec, Mode, PipelineConfig};
use crate::colorlab::manifest::write_manifest;
use crate::error::{Error, IoContext, Result};
use crate::featuregan::{train_featuregan, write_loss_csv};
use crate::segtoy::{
    evaluate_miou, gen_toy_dataset_sized, train_segmenter, write_seg_log, Domain, GenPosition, SegTrainLog,
    Segmenter, ToyDataset,
};

pub struct Datasets {
    pub train: ToyDataset,
    pub source_test: ToyDataset,
    pub target_test: ToyDataset,
}

fn load_spec(cfg: &DataConfig, spec: &DataSpec, domain: Domain) -> Result<ToyDataset> {
    let data = match &spec.dir {
        Some(dir) => ToyDataset::load(dir)?,
        None => gen_toy_dataset_sized(spec.n, spec.seed, domain, cfg.classes, cfg.image_size)?,
    };
    if data.classes() != cfg.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, config says {}",
            data.classes(),
            cfg.classes
        )));
    }
    Ok(data)
}

impl Datasets {
    pub fn load(cfg: &DataConfig) -> Result<Self> {
        Ok(Self {
            train: load_spec(cfg, &cfg.train, Domain::Source)?,
            source_test: load_spec(cfg, &cfg.source_test, Domain::Source)?,
            target_test: load_spec(cfg, &cfg.target_test, Domain::Target)?,
        })
    }
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn step1(&self) -> PathBuf {
        self.0.join("step1")
    }

    pub fn step2(&self, pos: GenPosition) -> PathBuf {
        self.0.join("step2").join(pos.name())
    }

    pub fn step3(&self, pos: GenPosition) -> PathBuf {
        self.0.join("step3").join(pos.name())
    }

    pub fn reports(&self) -> PathBuf {
        self.0.join("reports")
    }
}

fn hash_of(value: serde_json::Value) -> u64 {
    config_hash(value.to_string().as_bytes())
}

fn step1_hash(cfg: &PipelineConfig) -> u64 {
    hash_of(json!({
        "stage": "step1",
        "classes": cfg.data.classes,
        "image_size": cfg.data.image_size,
        "train": cfg.data.train,
        "segmenter": cfg.segmenter,
        "step": cfg.step1,
        "rica": cfg.mode.uses_rica().then_some(&cfg.rica),
    }))
}

fn step2_hash(cfg: &PipelineConfig, pos: GenPosition) -> u64 {
    hash_of(json!({
        "stage": "step2",
        "upstream": step1_hash(cfg),
        "position": pos,
        "gan": cfg.step2,
        "rica": cfg.rica,
    }))
}

fn step3_hash(cfg: &PipelineConfig, pos: GenPosition) -> u64 {
    hash_of(json!({
        "stage": "step3",
        "generator": step2_hash(cfg, pos),
        "init": (!cfg.step3_reinit).then(|| step1_hash(cfg)),
        "segmenter": cfg.segmenter,
        "step": cfg.step3,
        "rica": cfg.mode.uses_rica().then_some(&cfg.rica),
    }))
}

/// The stored checkpoint when it exists and came from the same inputs.
fn current(path: &Path, hash: u64) -> Result<Option<Checkpoint>> {
    if !path.exists() {
        return Ok(None);
    }
    let c = Checkpoint::load(path)?;
    Ok((c.config_hash == hash).then_some(c))
}

fn require(path: &Path, hash: u64, stage: &str) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingStage {
            stage: stage.to_owned(),
            path: path.to_path_buf(),
        });
    }
    let c = Checkpoint::load(path)?;
    if c.config_hash != hash {
        return Err(Error::Checkpoint(format!(
            "{stage} checkpoint at {} was produced by a different configuration",
            path.display()
        )));
    }
    Ok(c)
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(fs::File) -> Result<()>,
{
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    f(fs::File::create(path).at(path)?)
}

fn save_seg_outputs(dir: &Path, log: &SegTrainLog) -> Result<()> {
    write_with(&dir.join("log.csv"), |f| write_seg_log(f, &log.rows))?;
    if !log.rica.is_empty() {
        write_with(&dir.join("rica_manifest.csv"), |f| write_manifest(f, &log.rica))?;
    }
    Ok(())
}

/// Step 1: trains the segmenter whose conv1 becomes the frozen extractor.
pub fn run_step1(cfg: &PipelineConfig, run: &RunDir, data: &Datasets) -> Result<Checkpoint> {
    let hash = step1_hash(cfg);
    let path = run.step1().join("model.ckpt");
    if let Some(c) = current(&path, hash)? {
        return Ok(c);
    }
    let seed = cfg.step1.seed;
    let seg = Segmenter::new(cfg.segmenter.clone(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let rica = cfg.mode.uses_rica().then_some(&cfg.rica);
    let log = train_segmenter(&seg, &data.train, rica, &cfg.step1.train, seed)?;
    save_seg_outputs(&run.step1(), &log)?;
    let c = seg.to_checkpoint(hash, seed, log.rows.len() as u64)?;
    c.save(&path)?;
    Ok(c)
}

/// Step 2: trains a FeatureGAN on features of the frozen Step-1 model at `pos`.
pub fn run_step2(cfg: &PipelineConfig, run: &RunDir, data: &Datasets, pos: GenPosition) -> Result<Checkpoint> {
    let hash = step2_hash(cfg, pos);
    let dir = run.step2(pos);
    let path = dir.join("bundle.ckpt");
    if let Some(c) = current(&path, hash)? {
        return Ok(c);
    }
    let step1 = require(&run.step1().join("model.ckpt"), step1_hash(cfg), "step1")?;
    let extractor = Segmenter::from_checkpoint(&step1)?.frozen();
    let channels = cfg
        .segmenter
        .channels_at(pos)
        .ok_or_else(|| Error::Config("step 2 needs a generator position".into()))?;
    let gan = cfg.step2.for_channels(channels);
    let extract = |x: &crate::tensor::Tensor| extractor.extract(x, pos);
    let (bundle, log) = train_featuregan(&extract, &data.train.images, &cfg.rica, &gan, cfg.step2.seed)?;
    write_with(&dir.join("loss.csv"), |f| write_loss_csv(f, &log))?;
    let c = bundle.to_checkpoint(hash)?;
    c.save(&path)?;
    Ok(c)
}

/// Step 3: trains the final segmenter with the frozen `G_AB` plugged at `pos`.
pub fn run_step3(cfg: &PipelineConfig, run: &RunDir, data: &Datasets, pos: GenPosition) -> Result<Checkpoint> {
    let hash = step3_hash(cfg, pos);
    let dir = run.step3(pos);
    let path = dir.join("model.ckpt");
    if let Some(c) = current(&path, hash)? {
        return Ok(c);
    }
    let stage2 = format!("step2/{}", pos.name());
    let bundle = require(&run.step2(pos).join("bundle.ckpt"), step2_hash(cfg, pos), &stage2)?;
    let seed = cfg.step3.seed;
    let seg = if cfg.step3_reinit {
        Segmenter::new(cfg.segmenter.clone(), &mut ChaCha8Rng::seed_from_u64(seed))?
    } else {
        Segmenter::from_checkpoint(&require(&run.step1().join("model.ckpt"), step1_hash(cfg), "step1")?)?
    };
    let seg = seg.with_bundle_generator(pos, &bundle)?;
    let rica = cfg.mode.uses_rica().then_some(&cfg.rica);
    let log = train_segmenter(&seg, &data.train, rica, &cfg.step3.train, seed)?;
    save_seg_outputs(&dir, &log)?;
    let c = seg.to_checkpoint(hash, seed, log.rows.len() as u64)?;
    c.save(&path)?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub mode: Mode,
    pub position: GenPosition,
    pub source_miou: f64,
    pub target_miou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub rows: Vec<ReportRow>,
}

impl PipelineReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["mode", "position", "source_miou", "target_miou"])?;
        for r in &self.rows {
            w.write_record(&[
                r.mode.name().to_owned(),
                r.position.name().to_owned(),
                format!("{:.6}", r.source_miou),
                format!("{:.6}", r.target_miou),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn row(&self, position: GenPosition) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.position == position)
    }
}

fn evaluate_model(run: &RunDir, name: &str, c: &Checkpoint, data: &Datasets) -> Result<(f64, f64)> {
    let seg = Segmenter::from_checkpoint(c)?;
    let src = evaluate_miou(&seg, &data.source_test)?;
    let tgt = evaluate_miou(&seg, &data.target_test)?;
    let dir = run.reports();
    write_with(&dir.join(format!("{name}_source.csv")), |f| src.write_csv(f))?;
    write_with(&dir.join(format!("{name}_target.csv")), |f| tgt.write_csv(f))?;
    Ok((src.miou, tgt.miou))
}

/// Runs every step the mode calls for, then evaluates the final models on
/// the held-out source and target-shifted sets.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<PipelineReport> {
    cfg.validate()?;
    fs::create_dir_all(out).at(out)?;
    let echo = out.join("config.json");
    fs::write(&echo, cfg.to_json()?).at(&echo)?;
    let run = RunDir(out.to_path_buf());
    let data = Datasets::load(&cfg.data)?;

    let step1 = run_step1(cfg, &run, &data)?;
    let mut rows = Vec::new();
    if cfg.mode.uses_gbfa() {
        for &pos in cfg.active_positions() {
            run_step2(cfg, &run, &data, pos)?;
            let model = run_step3(cfg, &run, &data, pos)?;
            let (s, t) = evaluate_model(&run, &format!("step3_{}", pos.name()), &model, &data)?;
            rows.push(ReportRow {
                mode: cfg.mode,
                position: pos,
                source_miou: s,
                target_miou: t,
            });
        }
    } else {
        let (s, t) = evaluate_model(&run, "step1", &step1, &data)?;
        rows.push(ReportRow {
            mode: cfg.mode,
            position: GenPosition::None,
            source_miou: s,
            target_miou: t,
        });
    }
    let report = PipelineReport { rows };
    write_with(&run.reports().join("summary.csv"), |f| report.write_csv(f))?;
    Ok(report)
}
