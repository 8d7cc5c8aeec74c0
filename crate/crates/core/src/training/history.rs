use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss terms of one optimizer step. Terms that do not apply to a regime are empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Paired distance (gray-box) or total generator objective (black-box).
    pub loss: f64,
    pub d_a: Option<f64>,
    pub d_b: Option<f64>,
    pub g_adv_a: Option<f64>,
    pub g_adv_b: Option<f64>,
    pub cycle_a: Option<f64>,
    pub cycle_b: Option<f64>,
    /// Log-floor clamp events in this step.
    pub clamp_events: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    pub ssim: f64,
    pub mse: f64,
    pub mae: f64,
}

/// Step records, per-step wall-clock, and periodic validation summaries.
/// Timing is kept apart so the loss history is reproducible byte for byte.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    /// Header of the `loss` column in the CSV; empty means `loss`.
    pub loss_label: String,
    pub records: Vec<StepRecord>,
    pub wall_ms: Vec<f64>,
    pub validation: Vec<ValidationRecord>,
}

fn write_rows<S: Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    crate::data::write_atomic(path, &bytes)
}

#[derive(Serialize, Deserialize)]
struct TimingRow {
    step: usize,
    wall_ms: f64,
}

const ADVERSARIAL_COLUMNS: [&str; 6] = ["d_a", "d_b", "g_adv_a", "g_adv_b", "cycle_a", "cycle_b"];

fn terms(r: &StepRecord) -> [Option<f64>; 6] {
    [r.d_a, r.d_b, r.g_adv_a, r.g_adv_b, r.cycle_a, r.cycle_b]
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_cell(raw: &str, column: &str, row: usize) -> Result<Option<f64>> {
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse()
        .map(Some)
        .map_err(|_| Error::Format(format!("history row {row}: {column} = {raw:?} is not a number")))
}

impl TrainingHistory {
    pub fn with_label(label: impl Into<String>) -> Self {
        TrainingHistory {
            loss_label: label.into(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, record: StepRecord, wall_ms: f64) {
        debug_assert!(self.records.last().is_none_or(|r| r.step < record.step));
        self.records.push(record);
        self.wall_ms.push(wall_ms);
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    pub fn extend(&mut self, other: TrainingHistory) {
        self.records.extend(other.records);
        self.wall_ms.extend(other.wall_ms);
        self.validation.extend(other.validation);
    }

    /// Loss history, one row per step. Adversarial and cycle columns appear
    /// only when some step recorded them.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let adversarial = self.records.iter().any(|r| terms(r).iter().any(Option::is_some));
        let label = if self.loss_label.is_empty() { "loss" } else { &self.loss_label };
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["step", label];
        if adversarial {
            header.extend(ADVERSARIAL_COLUMNS);
        }
        header.push("clamp_events");
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.step.to_string(), r.loss.to_string()];
            if adversarial {
                row.extend(terms(r).map(cell));
            }
            row.push(r.clamp_events.to_string());
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::data::write_atomic(path, &self.to_csv()?)
    }

    pub fn write_timing_csv(&self, path: &Path) -> Result<()> {
        write_rows(
            path,
            self.records.iter().zip(&self.wall_ms).map(|(r, &wall_ms)| TimingRow {
                step: r.step,
                wall_ms,
            }),
        )
    }

    /// `(step, wall_ms)` rows written by [`TrainingHistory::write_timing_csv`].
    pub fn read_timing_csv(path: &Path) -> Result<Vec<(usize, f64)>> {
        let text = fs::read(path)?;
        let mut r = csv::Reader::from_reader(text.as_slice());
        let rows: Vec<TimingRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(rows.into_iter().map(|t| (t.step, t.wall_ms)).collect())
    }

    pub fn write_validation_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.validation)
    }

    /// Parses a file written by [`TrainingHistory::write_csv`]; the second
    /// column is the loss whatever its header.
    pub fn read_csv(path: &Path) -> Result<Vec<StepRecord>> {
        Ok(Self::read(path)?.records)
    }

    /// As [`TrainingHistory::read_csv`], keeping the loss label. Timing is not restored.
    pub fn read(path: &Path) -> Result<TrainingHistory> {
        let text = fs::read(path)?;
        let mut r = csv::Reader::from_reader(text.as_slice());
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "step" || &header[header.len() - 1] != "clamp_events" {
            return Err(Error::Format(format!("unrecognized history header {:?}", header.iter().collect::<Vec<_>>())));
        }
        let adversarial = header.len() == 3 + ADVERSARIAL_COLUMNS.len();
        let mut history = TrainingHistory::with_label(&header[1]);
        for (i, row) in r.records().enumerate() {
            let row = row?;
            let step = row[0]
                .parse()
                .map_err(|_| Error::Format(format!("history row {i}: bad step {:?}", &row[0])))?;
            let loss = parse_cell(&row[1], &header[1], i)?.unwrap_or(f64::NAN);
            let mut t = [None; 6];
            if adversarial {
                for (k, slot) in t.iter_mut().enumerate() {
                    *slot = parse_cell(&row[2 + k], ADVERSARIAL_COLUMNS[k], i)?;
                }
            }
            let clamp_events = row[row.len() - 1]
                .parse()
                .map_err(|_| Error::Format(format!("history row {i}: bad clamp count")))?;
            let [d_a, d_b, g_adv_a, g_adv_b, cycle_a, cycle_b] = t;
            history.records.push(StepRecord {
                step,
                loss,
                d_a,
                d_b,
                g_adv_a,
                g_adv_b,
                cycle_a,
                cycle_b,
                clamp_events,
            });
            history.wall_ms.push(f64::NAN);
        }
        Ok(history)
    }
}
