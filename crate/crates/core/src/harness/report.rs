use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::Classification;
use crate::error::{Error, Result};
use crate::policy::{Mode, Phase};

/// Column order of `steps.csv`.
pub const STEP_COLUMNS: [&str; 18] = [
    "t",
    "region_id",
    "w_x",
    "kappa",
    "explore",
    "exploit",
    "combined",
    "training_score",
    "sr_contrib",
    "cum_sr_pct",
    "acc",
    "prec",
    "rec",
    "f1",
    "loss_inner",
    "loss_outer",
    "buffer_core_size",
    "buffer_res_size",
];

/// One executed step. Metric columns are cumulative over the phase so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub t: usize,
    pub region_id: usize,
    pub w_x: f64,
    pub kappa: f64,
    pub explore: f64,
    pub exploit: f64,
    pub combined: f64,
    pub training_score: f64,
    pub sr_contrib: f64,
    pub cum_sr_pct: f64,
    pub acc: f64,
    pub prec: f64,
    pub rec: f64,
    pub f1: f64,
    /// Inner meta loss, or the online loss when no meta step ran.
    pub loss_inner: Option<f64>,
    pub loss_outer: Option<f64>,
    pub buffer_core_size: usize,
    pub buffer_res_size: usize,
}

impl StepRow {
    fn check_finite(&self) -> Result<()> {
        let fields = [
            self.w_x,
            self.kappa,
            self.explore,
            self.exploit,
            self.combined,
            self.training_score,
            self.sr_contrib,
            self.cum_sr_pct,
            self.acc,
            self.prec,
            self.rec,
            self.f1,
            self.loss_inner.unwrap_or(0.0),
            self.loss_outer.unwrap_or(0.0),
        ];
        match fields.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Dataset(format!("step {}: non-finite value in field {i}", self.t))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRow {
    pub t: usize,
    pub region_id: usize,
    pub mu: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub t: usize,
    pub batch_size: usize,
    /// Mean over dimensions of the sample variance of the meta-batch members'
    /// relevance means as recorded when each was selected.
    pub variance: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreRow {
    pub t: usize,
    pub kappa: f64,
    pub explore_dominant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: Mode,
    pub phase: Phase,
    pub seed: u64,
    pub budget: usize,
    pub steps: usize,
    pub sr_raw: Option<f64>,
    pub sr_pct: Option<f64>,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl RunMetrics {
    pub(crate) fn new(mode: Mode, phase: Phase, seed: u64, budget: usize) -> Self {
        RunMetrics {
            mode,
            phase,
            seed,
            budget,
            steps: 0,
            sr_raw: None,
            sr_pct: None,
            accuracy: None,
            precision: None,
            recall: None,
            f1: None,
        }
    }

    pub(crate) fn update(&mut self, steps: usize, sr: (f64, f64), c: Classification) {
        self.steps = steps;
        self.sr_raw = Some(sr.0);
        self.sr_pct = Some(sr.1);
        self.accuracy = Some(c.accuracy);
        self.precision = Some(c.precision);
        self.recall = Some(c.recall);
        self.f1 = Some(c.f1);
    }
}

/// Everything a phase produces apart from the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<StepRow>,
    pub relevance: Vec<RelevanceRow>,
    pub variance: Vec<VarianceRow>,
    pub explore: Vec<ExploreRow>,
    pub metrics: RunMetrics,
}

impl RunReport {
    pub(crate) fn new(mode: Mode, phase: Phase, seed: u64, budget: usize) -> Self {
        RunReport {
            rows: Vec::new(),
            relevance: Vec::new(),
            variance: Vec::new(),
            explore: Vec::new(),
            metrics: RunMetrics::new(mode, phase, seed, budget),
        }
    }

    pub fn region_sequence(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.region_id).collect()
    }
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the CSV series and `metrics.json` into `dir`.
pub fn emit_reports(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    // explicit header so an empty run still gets one
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(dir.join("steps.csv"))?;
    w.write_record(STEP_COLUMNS)?;
    for row in &report.rows {
        row.check_finite()?;
        w.serialize(row)?;
    }
    w.flush()?;

    let k = report.relevance.first().map_or(0, |r| r.mu.len());
    let header: Vec<String> = ["t", "region_id"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..k).map(|i| format!("mu_{i}")))
        .collect();
    write_csv(
        &dir.join("relevance_dump.csv"),
        &header,
        report.relevance.iter().map(|r| {
            [r.t.to_string(), r.region_id.to_string()]
                .into_iter()
                .chain(r.mu.iter().map(|m| m.to_string()))
                .collect()
        }),
    )?;
    write_csv(
        &dir.join("variance_series.csv"),
        &["t".into(), "batch_size".into(), "variance".into()],
        report
            .variance
            .iter()
            .map(|v| vec![v.t.to_string(), v.batch_size.to_string(), opt(v.variance)]),
    )?;
    let mut dominant = 0usize;
    write_csv(
        &dir.join("explore_fraction.csv"),
        &["t".into(), "kappa".into(), "explore_dominant".into(), "cum_fraction".into()],
        report.explore.iter().enumerate().map(|(i, e)| {
            dominant += usize::from(e.explore_dominant);
            vec![
                e.t.to_string(),
                e.kappa.to_string(),
                u8::from(e.explore_dominant).to_string(),
                (dominant as f64 / (i + 1) as f64).to_string(),
            ]
        }),
    )?;
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&report.metrics)?)?;
    Ok(())
}

/// Reads `steps.csv` back, checking the header and that every value is finite.
pub fn read_steps(path: &Path) -> Result<Vec<StepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != STEP_COLUMNS {
        return Err(Error::Dataset(format!("{}: unexpected columns {header:?}", path.display())));
    }
    let mut rows = Vec::new();
    for row in r.deserialize() {
        let row: StepRow = row?;
        row.check_finite()?;
        rows.push(row);
    }
    Ok(rows)
}
