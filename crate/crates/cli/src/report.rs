//! Cross-run comparison: the loss × mode accuracy table, learning curves and per-length buckets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ptmaml_core::data::Split;
use ptmaml_core::learner::LossKind;
use ptmaml_core::meta::{Metrics, Mode, TrainReport};

use crate::commands::{load_report, metrics_name, read_fingerprint, read_json, write_json, Layout};
use crate::error::{io_err, CliError};

/// One cell of the comparison table: test-split accuracies of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mode: Mode,
    pub loss: LossKind,
    pub adapted: bool,
    pub acc_lf: Option<f64>,
    pub acc_ex: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub fingerprint: String,
    pub cells: Vec<Cell>,
}

impl Table {
    fn get(&self, mode: Mode, loss: LossKind) -> Option<&Cell> {
        self.cells.iter().find(|c| c.mode == mode && c.loss == loss)
    }

    pub fn to_text(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{:.1}", 100.0 * x));
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>8} {:>8}", "test accuracy", "acc_lf", "acc_ex");
        for mode in [Mode::Baseline, Mode::Ptmaml] {
            for loss in LossKind::ALL {
                let name = match mode {
                    Mode::Baseline => format!("{} loss", loss.name()),
                    Mode::Ptmaml => format!("meta + {} loss", loss.name()),
                };
                let c = self.get(mode, loss);
                let _ = writeln!(
                    s,
                    "{:<16} {:>8} {:>8}",
                    name,
                    f(c.and_then(|c| c.acc_lf)),
                    f(c.and_then(|c| c.acc_ex))
                );
            }
        }
        s
    }
}

/// Baseline cells use plain test metrics; meta cells prefer adapted ones.
fn cell(l: &Layout, mode: Mode, loss: LossKind) -> Result<Cell, CliError> {
    let dir = l.run_dir(mode, loss);
    let order: &[bool] = match mode {
        Mode::Baseline => &[false, true],
        Mode::Ptmaml => &[true, false],
    };
    for &adapted in order {
        let p = dir.join(metrics_name(Split::Test, adapted));
        if p.exists() {
            let m: Metrics = read_json(&p)?;
            return Ok(Cell {
                mode,
                loss,
                adapted,
                acc_lf: Some(m.acc_lf),
                acc_ex: Some(m.acc_ex),
            });
        }
    }
    Ok(Cell {
        mode,
        loss,
        adapted: false,
        acc_lf: None,
        acc_ex: None,
    })
}

pub fn build_table(out: &Path) -> Result<(Table, Vec<(String, TrainReport)>), CliError> {
    let l = Layout {
        data: Default::default(),
        out: out.to_path_buf(),
    };
    let fingerprint = read_fingerprint(out)?;
    let mut cells = Vec::new();
    let mut reports = Vec::new();
    for mode in [Mode::Baseline, Mode::Ptmaml] {
        for loss in LossKind::ALL {
            let name = format!("{}-{}", mode.name(), loss.name());
            if let Some(r) = load_report(&l.run_dir(mode, loss))? {
                if r.dataset_fingerprint != fingerprint {
                    return Err(CliError::Fingerprint {
                        left: format!("run {name}"),
                        left_fp: r.dataset_fingerprint,
                        right: "prepared data".into(),
                        right_fp: fingerprint,
                    });
                }
                reports.push((name, r));
            }
            cells.push(cell(&l, mode, loss)?);
        }
    }
    if reports.is_empty() {
        return Err(CliError::NoRuns(l.runs()));
    }
    Ok((Table { fingerprint, cells }, reports))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

pub fn curves_csv(reports: &[(String, TrainReport)]) -> String {
    let mut s = String::from(
        "run,epoch,train_loss,train_acc_lf,dev_acc_lf,dev_acc_ex,dev_adapted_acc_lf,dev_adapted_acc_ex,wall_secs\n",
    );
    for (name, r) in reports {
        for e in &r.epochs {
            let _ = writeln!(
                s,
                "{name},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                e.train_acc_lf,
                e.dev_acc_lf,
                e.dev_acc_ex,
                opt(e.dev_adapted_acc_lf),
                opt(e.dev_adapted_acc_ex),
                e.wall_secs
            );
        }
    }
    s
}

fn per_length_csv(l: &Layout) -> Result<String, CliError> {
    let mut s = String::from("run,split,adapted,length,count,acc_lf\n");
    for mode in [Mode::Baseline, Mode::Ptmaml] {
        for loss in LossKind::ALL {
            for split in [Split::Dev, Split::Test] {
                for adapted in [false, true] {
                    let p = l.run_dir(mode, loss).join(metrics_name(split, adapted));
                    if !p.exists() {
                        continue;
                    }
                    let m: Metrics = read_json(&p)?;
                    for (len, (count, acc)) in &m.per_length {
                        let _ = writeln!(
                            s,
                            "{}-{},{},{adapted},{len},{count},{acc}",
                            mode.name(),
                            loss.name(),
                            split.name()
                        );
                    }
                }
            }
        }
    }
    Ok(s)
}

/// Differences `self − other`, cell by cell, where both sides have a value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub mode: Mode,
    pub loss: LossKind,
    pub acc_lf: Option<f64>,
    pub acc_ex: Option<f64>,
}

pub fn deltas(a: &Table, b: &Table) -> Result<Vec<Delta>, CliError> {
    if a.fingerprint != b.fingerprint {
        return Err(CliError::Fingerprint {
            left: "this output".into(),
            left_fp: a.fingerprint.clone(),
            right: "compared output".into(),
            right_fp: b.fingerprint.clone(),
        });
    }
    let sub = |x: Option<f64>, y: Option<f64>| x.zip(y).map(|(x, y)| x - y);
    Ok(a.cells
        .iter()
        .map(|c| {
            let o = b.get(c.mode, c.loss);
            Delta {
                mode: c.mode,
                loss: c.loss,
                acc_lf: sub(c.acc_lf, o.and_then(|o| o.acc_lf)),
                acc_ex: sub(c.acc_ex, o.and_then(|o| o.acc_ex)),
            }
        })
        .collect())
}

/// Writes `table.txt`, `table.json`, `curves.csv`, `per_length.csv` and, with `against`, `deltas.json`.
pub fn report(out: &Path, against: Option<&Path>) -> Result<serde_json::Value, CliError> {
    let l = Layout {
        data: Default::default(),
        out: out.to_path_buf(),
    };
    let (table, reports) = build_table(out)?;
    let dir = l.report_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let w = |name: &str, text: String| fs::write(dir.join(name), text).map_err(io_err(dir.join(name)));
    w("table.txt", table.to_text())?;
    write_json(&dir.join("table.json"), &table)?;
    w("curves.csv", curves_csv(&reports))?;
    w("per_length.csv", per_length_csv(&l)?)?;
    let mut summary = serde_json::json!({
        "runs": reports.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
        "table": table,
    });
    if let Some(other) = against {
        let (other_table, _) = build_table(other)?;
        let d = deltas(&table, &other_table)?;
        write_json(&dir.join("deltas.json"), &d)?;
        summary["deltas"] = serde_json::to_value(&d).expect("deltas serialize");
    }
    Ok(summary)
}
