//! Monte Carlo study of interval methods for the product `θ₁θ₂`.
//!
//! Each design fixes `θ₂`, the correlation `r` and a grid of `θ₁/θ₂`. For
//! every replication `θ̂ = θ + N(0, Σ(r))` with unit variances, each method's
//! interval is computed and checked for the truth `θ₁θ₂` and for zero.
//! Replication `s` of cell `k` draws from the substream keyed by
//! `(design, k, s)`, so results do not depend on the thread count.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use plotters::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critval::Method;
use crate::error::{Error, Result};
use crate::gfunc::GFunction;
use crate::input::EstimateInput;
use crate::invert::{self, InvertConfig};
use crate::rng::RngStream;
use crate::stats;

/// Share of failed replications above which a cell errors.
const MAX_FAILURE_SHARE: f64 = 0.005;

pub const RESULT_COLUMNS: [&str; 13] = [
    "design_id",
    "theta1",
    "theta2",
    "r",
    "method",
    "reject_truth",
    "reject_zero",
    "median_len",
    "mc_se_truth",
    "mc_se_zero",
    "S",
    "seed",
    "flags",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MCDesign {
    pub id: String,
    pub theta2: f64,
    pub ratios: Vec<f64>,
    pub r: f64,
    pub alpha: f64,
    pub eta: f64,
    pub s: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub bn2_draws: usize,
    pub boot_draws: usize,
}

/// `θ₁/θ₂ ∈ {-1, -0.8, …, 1}`.
pub fn ratio_grid() -> Vec<f64> {
    (-5..=5).map(|k| k as f64 / 5.0).collect()
}

impl MCDesign {
    pub fn new(theta2: f64, r: f64, s: usize, seed: u64) -> Self {
        Self {
            id: format!("t{theta2}-r{r}"),
            theta2,
            ratios: ratio_grid(),
            r,
            alpha: 0.05,
            eta: 0.005,
            s,
            methods: vec![Method::Bn1, Method::Bn2, Method::Projection, Method::Wald, Method::NaiveBoot],
            seed,
            bn2_draws: 2000,
            boot_draws: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r.abs() < 1.0) {
            return Err(Error::domain(format!("correlation {} outside (-1, 1)", self.r)));
        }
        if self.s < 100 {
            return Err(Error::domain(format!("S = {} below 100", self.s)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0 && self.eta > 0.0 && self.eta < self.alpha) {
            return Err(Error::domain("need 0 < eta < alpha < 1"));
        }
        if self.ratios.is_empty() || self.methods.is_empty() {
            return Err(Error::domain("design needs at least one cell and one method"));
        }
        if let Some(m) = self.methods.iter().find(|m| **m == Method::Am) {
            return Err(Error::NotImplemented(format!("{m} in the simulation study")));
        }
        if self.ratios.iter().chain([&self.theta2]).any(|v| !v.is_finite()) {
            return Err(Error::domain("design parameters must be finite"));
        }
        Ok(())
    }

    fn stream(&self) -> RngStream {
        RngStream::new(self.seed).substream(self.theta2.to_bits() ^ self.r.to_bits().rotate_left(17))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(Preset::Paper),
            other => Err(Error::domain(format!("unknown preset '{other}' (expected 'paper')"))),
        }
    }
}

impl Preset {
    /// `θ₂ ∈ {2, 6}` × `r ∈ {0, 0.5}` with S = 2000, or 500 when `quick`.
    pub fn designs(self, quick: bool, seed: u64) -> Vec<MCDesign> {
        let s = if quick { 500 } else { 2000 };
        let mut out = Vec::new();
        for theta2 in [2.0, 6.0] {
            for r in [0.0, 0.5] {
                out.push(MCDesign::new(theta2, r, s, seed));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub design_id: String,
    pub theta1: f64,
    pub theta2: f64,
    pub ratio: f64,
    pub r: f64,
    pub method: Method,
    pub reject_truth: f64,
    pub reject_zero: f64,
    pub median_len: f64,
    pub mc_se_truth: f64,
    pub mc_se_zero: f64,
    /// Replications entering the rates.
    pub s: usize,
    pub failures: usize,
    pub seed: u64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCResult {
    pub design: MCDesign,
    pub cells: Vec<CellResult>,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    covers_truth: bool,
    covers_zero: bool,
    length: f64,
}

pub fn run_design(design: &MCDesign) -> Result<MCResult> {
    design.validate()?;
    let start = Instant::now();
    let g = GFunction::product();
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, design.r, design.r, 1.0]);
    let base = EstimateInput::new(DVector::zeros(2), sigma.clone(), 1.0, DVector::zeros(2))?;
    let chol = crate::linalg::cholesky_lower(&sigma)?;
    let stream = design.stream();
    let n_cells = design.ratios.len();

    let tasks: Vec<(usize, usize)> = (0..n_cells).flat_map(|k| (0..design.s).map(move |s| (k, s))).collect();
    let outcomes: Vec<Vec<Result<Outcome>>> = tasks
        .par_iter()
        .map(|&(k, s)| {
            let theta = [design.ratios[k] * design.theta2, design.theta2];
            let rep = stream.substream(k as u64).substream(s as u64);
            let mut rng = rep.rng();
            let e = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            let theta_hat = DVector::from_row_slice(&theta) + &chol * e;
            let cfg = InvertConfig {
                eta: Some(design.eta),
                seed: rep.substream(1),
                bn2_draws: design.bn2_draws,
                boot_draws: design.boot_draws,
                check_eligibility: false,
                ..InvertConfig::default()
            };
            let truth = theta[0] * theta[1];
            design
                .methods
                .iter()
                .map(|&m| {
                    let input = base.with_theta_hat(theta_hat.clone())?;
                    let ci = invert::invert_test(&g, &input, m, design.alpha, &cfg)?;
                    Ok(Outcome {
                        covers_truth: ci.contains(truth),
                        covers_zero: ci.contains(0.0),
                        length: ci.length(),
                    })
                })
                .collect()
        })
        .collect();

    let mut cells = Vec::with_capacity(n_cells * design.methods.len());
    for (k, &ratio) in design.ratios.iter().enumerate() {
        let reps = &outcomes[k * design.s..(k + 1) * design.s];
        for (j, &method) in design.methods.iter().enumerate() {
            cells.push(aggregate(design, k, ratio, j, method, reps)?);
        }
    }
    Ok(MCResult {
        design: design.clone(),
        cells,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

fn aggregate(
    design: &MCDesign,
    k: usize,
    ratio: f64,
    j: usize,
    method: Method,
    reps: &[Vec<Result<Outcome>>],
) -> Result<CellResult> {
    let mut ok = Vec::with_capacity(reps.len());
    let mut first_err = None;
    for rep in reps {
        match &rep[j] {
            Ok(o) => ok.push(*o),
            Err(e) => {
                first_err.get_or_insert_with(|| e.to_string());
            }
        }
    }
    let failures = reps.len() - ok.len();
    if failures as f64 >= MAX_FAILURE_SHARE * reps.len() as f64 && failures > 0 {
        return Err(Error::Internal(format!(
            "{} cell {k} ({method}): {failures} of {} replications failed; first: {}",
            design.id,
            reps.len(),
            first_err.unwrap_or_default()
        )));
    }
    let n = ok.len();
    let reject_truth = ok.iter().filter(|o| !o.covers_truth).count() as f64 / n as f64;
    let reject_zero = ok.iter().filter(|o| !o.covers_zero).count() as f64 / n as f64;
    let lengths: Vec<f64> = ok.iter().map(|o| o.length).collect();
    let mut flags = Vec::new();
    if failures > 0 {
        flags.push(format!("failures={failures}"));
    }
    if method == Method::NaiveBoot {
        flags.push(format!("percentile;B={}", design.boot_draws));
    }
    if method == Method::Bn2 {
        flags.push(format!("B={};eta={}", design.bn2_draws, design.eta));
    }
    Ok(CellResult {
        design_id: design.id.clone(),
        theta1: ratio * design.theta2,
        theta2: design.theta2,
        ratio,
        r: design.r,
        method,
        reject_truth,
        reject_zero,
        median_len: stats::lower_median(&lengths)?,
        mc_se_truth: stats::binomial_se(reject_truth, n),
        mc_se_zero: stats::binomial_se(reject_zero, n),
        s: n,
        failures,
        seed: design.seed,
        flags,
    })
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub design_id: String,
    pub theta1: f64,
    pub theta2: f64,
    pub r: f64,
    pub method: String,
    pub reject_truth: f64,
    pub reject_zero: f64,
    pub median_len: f64,
    pub mc_se_truth: f64,
    pub mc_se_zero: f64,
    #[serde(rename = "S")]
    pub s: usize,
    pub seed: u64,
    pub flags: String,
}

impl From<&CellResult> for ResultRow {
    fn from(c: &CellResult) -> Self {
        Self {
            design_id: c.design_id.clone(),
            theta1: c.theta1,
            theta2: c.theta2,
            r: c.r,
            method: c.method.to_string(),
            reject_truth: c.reject_truth,
            reject_zero: c.reject_zero,
            median_len: c.median_len,
            mc_se_truth: c.mc_se_truth,
            mc_se_zero: c.mc_se_zero,
            s: c.s,
            seed: c.seed,
            flags: c.flags.join(";"),
        }
    }
}

pub fn write_results_csv(results: &[MCResult], w: impl Write) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(RESULT_COLUMNS)?;
    for c in results.iter().flat_map(|r| &r.cells) {
        wtr.serialize(ResultRow::from(c))?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Parse `results.csv`; the header must match [`RESULT_COLUMNS`].
pub fn read_results_csv(r: impl Read) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(RESULT_COLUMNS.iter().copied()) {
        return Err(Error::domain(format!(
            "unexpected results header: {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    RejectTruth,
    RejectZero,
    MedianLength,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::RejectTruth, Metric::RejectZero, Metric::MedianLength];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::RejectTruth => "reject_truth",
            Metric::RejectZero => "reject_zero",
            Metric::MedianLength => "median_len",
        }
    }

    fn value(&self, c: &CellResult) -> f64 {
        match self {
            Metric::RejectTruth => c.reject_truth,
            Metric::RejectZero => c.reject_zero,
            Metric::MedianLength => c.median_len,
        }
    }
}

/// Write `results.csv` and, per design, one SVG per metric. Returns the
/// paths written.
pub fn emit_results(results: &[MCResult], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = out_dir.join("results.csv");
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_results_csv(results, std::io::BufWriter::new(file))?;
    let mut written = vec![csv_path];
    for res in results.iter().filter(|r| !r.cells.is_empty()) {
        for metric in Metric::ALL {
            let path = out_dir.join(format!("{}_{}.svg", res.design.id, metric.as_str()));
            plot_metric(res, metric, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn plot_metric(res: &MCResult, metric: Metric, path: &Path) -> Result<()> {
    let plot_err = |e: &dyn std::fmt::Display| Error::Plot(format!("{}: {e}", path.display()));
    let values: Vec<f64> = res.cells.iter().map(|c| metric.value(c)).filter(|v| v.is_finite()).collect();
    let y_max = values.iter().fold(0.0f64, |a, v| a.max(*v));
    let y_top = if y_max > 0.0 { y_max * 1.1 } else { 1.0 };
    let x_lo = res.design.ratios.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    let x_hi = res.design.ratios.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
    let (x_lo, x_hi) = if x_hi > x_lo { (x_lo, x_hi) } else { (x_lo - 1.0, x_hi + 1.0) };

    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let title = format!("{} (theta2={}, r={})", metric.as_str(), res.design.theta2, res.design.r);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x_lo..x_hi, 0.0..y_top)
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc("theta1/theta2")
        .y_desc(metric.as_str())
        .draw()
        .map_err(|e| plot_err(&e))?;
    if metric != Metric::MedianLength {
        let alpha = res.design.alpha;
        chart
            .draw_series(LineSeries::new([(x_lo, alpha), (x_hi, alpha)], BLACK.mix(0.4)))
            .map_err(|e| plot_err(&e))?;
    }
    for (i, method) in res.design.methods.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let points: Vec<(f64, f64)> = res
            .cells
            .iter()
            .filter(|c| c.method == *method)
            .map(|c| (c.ratio, metric.value(c)))
            .collect();
        chart
            .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
            .map_err(|e| plot_err(&e))?
            .label(method.as_str())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color.stroke_width(2)));
        chart
            .draw_series(points.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(|e| plot_err(&e))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}
