//! One function per pipeline command. Each reads and writes only the files named in [`Layout`].

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use ptmaml_autodiff::checkpoint;
use ptmaml_core::data::{
    assemble, filter_copyable, generate_synthetic, load_dataset, load_examples, load_tables, save_examples,
    write_raw_examples, write_tables, Dataset, Split,
};
use ptmaml_core::learner::{Learner, LearnerConfig, LossKind, Vocab};
use ptmaml_core::meta::{evaluate, train, Adapter, Metrics, Mode, TrainData, TrainReport};
use ptmaml_core::relevance::{build_pseudo_tasks, predict_sql_type, train_type_classifier, TaskSet, TypeClassifier};
use ptmaml_core::sql::sql_type_of;

use crate::config::RunConfig;
use crate::error::{io_err, json_err, CliError};

/// File locations derived from the two configured directories.
#[derive(Clone, Debug)]
pub struct Layout {
    pub data: PathBuf,
    pub out: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            data: cfg.paths.data.clone(),
            out: cfg.paths.out.clone(),
        }
    }

    pub fn raw(&self, split: Split) -> PathBuf {
        self.data.join(format!("{}.jsonl", split.name()))
    }

    pub fn raw_tables(&self) -> PathBuf {
        self.data.join("tables.jsonl")
    }

    pub fn prep(&self, split: Split) -> PathBuf {
        self.out.join("prep").join(format!("{}.jsonl", split.name()))
    }

    pub fn prep_tables(&self) -> PathBuf {
        self.out.join("prep").join("tables.jsonl")
    }

    pub fn fingerprint(&self) -> PathBuf {
        self.out.join("prep").join("fingerprint.txt")
    }

    pub fn classifier(&self) -> PathBuf {
        self.out.join("relevance").join("classifier.json")
    }

    pub fn tasks(&self) -> PathBuf {
        self.out.join("relevance").join("tasks.jsonl")
    }

    pub fn runs(&self) -> PathBuf {
        self.out.join("runs")
    }

    pub fn run_dir(&self, mode: Mode, loss: LossKind) -> PathBuf {
        self.runs().join(format!("{}-{}", mode.name(), loss.name()))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }
}

pub fn metrics_name(split: Split, adapt: bool) -> String {
    format!("metrics-{}-{}.json", split.name(), if adapt { "adapted" } else { "plain" })
}

fn require(path: PathBuf, command: &'static str) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Dependency { path, command })
    }
}

fn mkdirs(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        mkdirs(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

pub fn gen_synthetic(cfg: &RunConfig) -> Result<Value, CliError> {
    let l = Layout::new(cfg);
    let corpus = generate_synthetic(&cfg.synth)?;
    mkdirs(&l.data)?;
    write_tables(&l.raw_tables(), &corpus.tables)?;
    write_raw_examples(&l.raw(Split::Train), &corpus.train)?;
    write_raw_examples(&l.raw(Split::Dev), &corpus.dev)?;
    write_raw_examples(&l.raw(Split::Test), &corpus.test)?;
    Ok(json!({
        "tables": corpus.tables.len(),
        "train": corpus.train.len(),
        "dev": corpus.dev.len(),
        "test": corpus.test.len(),
        "dir": l.data,
    }))
}

/// SHA-256 over the prepared files, in a fixed order.
fn fingerprint_files(l: &Layout) -> Result<String, CliError> {
    let mut h = Sha256::new();
    for p in [l.prep_tables(), l.prep(Split::Train), l.prep(Split::Dev), l.prep(Split::Test)] {
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn prep(cfg: &RunConfig) -> Result<Value, CliError> {
    let l = Layout::new(cfg);
    let tables_path = require(l.raw_tables(), "gen-synthetic")?;
    let mut counts = serde_json::Map::new();
    let mut tables = None;
    for split in [Split::Train, Split::Dev, Split::Test] {
        let raw = require(l.raw(split), "gen-synthetic")?;
        let ds = load_dataset(&raw, &tables_path, split)?;
        let before = ds.len();
        let ds = filter_copyable(&ds);
        mkdirs(&l.out.join("prep"))?;
        save_examples(&l.prep(split), &ds.examples)?;
        counts.insert(split.name().into(), json!({"loaded": before, "kept": ds.len()}));
        tables = Some(ds.tables);
    }
    write_tables(&l.prep_tables(), tables.expect("three splits").values())?;
    let fp = fingerprint_files(&l)?;
    fs::write(l.fingerprint(), format!("{fp}\n")).map_err(io_err(l.fingerprint()))?;
    counts.insert("fingerprint".into(), json!(fp));
    Ok(Value::Object(counts))
}

pub fn load_split(l: &Layout, split: Split) -> Result<Dataset, CliError> {
    let ex_path = require(l.prep(split), "prep")?;
    let tables = load_tables(&require(l.prep_tables(), "prep")?)?;
    Ok(assemble(split, load_examples(&ex_path)?, &tables)?)
}

pub fn read_fingerprint(out: &Path) -> Result<String, CliError> {
    let p = require(out.join("prep").join("fingerprint.txt"), "prep")?;
    Ok(fs::read_to_string(&p).map_err(io_err(&p))?.trim().to_string())
}

fn type_accuracy(clf: &TypeClassifier, ds: &Dataset) -> f64 {
    let ok = ds
        .examples
        .iter()
        .filter(|e| predict_sql_type(clf, &e.tokens) == sql_type_of(&e.gold))
        .count();
    ok as f64 / ds.len().max(1) as f64
}

pub fn train_relevance(cfg: &RunConfig) -> Result<Value, CliError> {
    let l = Layout::new(cfg);
    let train_ds = load_split(&l, Split::Train)?;
    let test_ds = load_split(&l, Split::Test)?;
    let clf = train_type_classifier(&train_ds, &cfg.classifier);
    write_json(&l.classifier(), &clf)?;
    Ok(json!({
        "train_type_accuracy": type_accuracy(&clf, &train_ds),
        "test_type_accuracy": type_accuracy(&clf, &test_ds),
        "vocab": clf.vocab_len(),
    }))
}

fn load_classifier(l: &Layout) -> Result<TypeClassifier, CliError> {
    read_json(&require(l.classifier(), "train-relevance")?)
}

pub fn build_tasks(cfg: &RunConfig) -> Result<Value, CliError> {
    let l = Layout::new(cfg);
    let clf = load_classifier(&l)?;
    let train_ds = load_split(&l, Split::Train)?;
    let tasks = build_pseudo_tasks(&train_ds, cfg.meta.k, &clf, cfg.gold_types);
    let p = l.tasks();
    tasks.save(&p).map_err(io_err(&p))?;
    let short = tasks.tasks.iter().filter(|t| t.support_ids.len() < cfg.meta.k).count();
    Ok(json!({"tasks": tasks.len(), "k": cfg.meta.k, "short_support": short}))
}

fn load_vocab(path: &Path) -> Result<Vocab, CliError> {
    let mut v: Vocab = read_json(path)?;
    v.reindex();
    Ok(v)
}

pub fn train_cmd(cfg: &RunConfig, mode: Mode, loss: LossKind) -> Result<Value, CliError> {
    let l = Layout::new(cfg);
    let train_ds = load_split(&l, Split::Train)?;
    let dev = load_split(&l, Split::Dev)?;
    let fingerprint = read_fingerprint(&l.out)?;
    let (tasks, clf) = match mode {
        Mode::Ptmaml => {
            let p = require(l.tasks(), "build-tasks")?;
            let tasks = TaskSet::load(&p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            (Some(tasks), Some(load_classifier(&l)?))
        }
        Mode::Baseline if cfg.meta.eval_adapted => (None, Some(load_classifier(&l)?)),
        Mode::Baseline => (None, None),
    };
    let learner_cfg = LearnerConfig {
        loss_kind: loss,
        ..cfg.learner.clone()
    };
    let learner = Learner::new(learner_cfg.clone(), Vocab::build(&train_ds.examples));
    let dir = l.run_dir(mode, loss);
    mkdirs(&dir)?;
    let snapshot = serde_json::to_value(cfg).expect("config serializes");
    write_json(&dir.join("config.json"), cfg)?;
    info!("train {} {} seed {}: {}", mode.name(), loss.name(), cfg.seed, snapshot);

    let data = TrainData {
        train: &train_ds,
        dev: &dev,
        tasks: tasks.as_ref(),
        clf: clf.as_ref(),
    };
    let out = train(&learner, learner.init_params(cfg.seed), &data, &cfg.meta, mode, snapshot, fingerprint)?;
    checkpoint::save(&out.best_params, &dir.join("checkpoint.json"))?;
    checkpoint::save(&out.final_params, &dir.join("final.json"))?;
    write_json(&dir.join("vocab.json"), learner.vocab())?;
    write_json(&dir.join("learner.json"), &learner_cfg)?;
    write_json(&dir.join("report.json"), &out.report)?;
    fs::write(dir.join("report.txt"), out.report.to_text()).map_err(io_err(dir.join("report.txt")))?;
    Ok(json!({
        "run": dir,
        "best_epoch": out.report.best_epoch,
        "best_dev_acc_lf": out.report.best_dev_acc_lf,
        "final_dev_acc_lf": out.report.epochs.last().map(|e| e.dev_acc_lf),
    }))
}

pub fn eval_cmd(cfg: &RunConfig, mode: Mode, loss: LossKind, split: Split, adapt: bool) -> Result<Metrics, CliError> {
    let l = Layout::new(cfg);
    let dir = l.run_dir(mode, loss);
    let ckpt = require(dir.join("checkpoint.json"), "train")?;
    let clf = if adapt { Some(load_classifier(&l)?) } else { None };
    let learner_cfg: LearnerConfig = read_json(&require(dir.join("learner.json"), "train")?)?;
    let learner = Learner::new(learner_cfg, load_vocab(&require(dir.join("vocab.json"), "train")?)?);
    let params = checkpoint::load(&ckpt)?;
    learner.check_params(&params)?;
    let ds = load_split(&l, split)?;

    let metrics = match &clf {
        Some(clf) => {
            let train_ds = load_split(&l, Split::Train)?;
            let train_enc = train_ds
                .examples
                .iter()
                .map(|e| learner.encode(e))
                .collect::<Result<Vec<_>, _>>()?;
            let adapter = Adapter::new(&train_ds, &train_enc, clf, cfg.meta.k, cfg.meta.alpha, cfg.meta.inner_steps);
            evaluate(&learner, &params, &ds, Some(&adapter), cfg.meta.threads)?
        }
        None => evaluate(&learner, &params, &ds, None, cfg.meta.threads)?,
    };
    write_json(&dir.join(metrics_name(split, adapt)), &metrics)?;
    Ok(metrics)
}

/// Loads a finished run's report, if the directory holds one.
pub fn load_report(dir: &Path) -> Result<Option<TrainReport>, CliError> {
    let p = dir.join("report.json");
    if !p.exists() {
        return Ok(None);
    }
    read_json(&p).map(Some)
}
