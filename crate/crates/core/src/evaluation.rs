//! Accuracy metrics for values and Jacobians, error histograms,
//! predicted-vs-analytical heatmaps, moment summaries and the
//! finite-difference cross-check of the reverse-mode Jacobian.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cv::{CvFunction, CvKind};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::surrogate::Mlp;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// Raw signed errors, predicted minus analytical.
    pub errors: Vec<f64>,
}

impl ErrorMetrics {
    pub fn from_errors(errors: Vec<f64>) -> Self {
        let n = errors.len().max(1) as f64;
        let mse = errors.iter().map(|e| e * e).sum::<f64>() / n;
        let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
        ErrorMetrics {
            rmse: mse.sqrt(),
            mae,
            errors,
        }
    }
}

fn rows<'a>(ds: &'a LabeledDataset, idx: &[usize]) -> Vec<&'a [f64]> {
    idx.iter().map(|&i| ds.input(i)).collect()
}

fn check_model(model: &dyn CvFunction, ds: &LabeledDataset, idx: &[usize]) -> Result<()> {
    if model.input_dim() != ds.dim() {
        return Err(Error::Dimension {
            expected: ds.dim(),
            got: model.input_dim(),
        });
    }
    if idx.is_empty() {
        return Err(Error::InvalidArgument("no rows to evaluate".into()));
    }
    Ok(())
}

/// Value errors over the rows `idx`.
pub fn value_metrics(model: &dyn CvFunction, ds: &LabeledDataset, idx: &[usize]) -> Result<ErrorMetrics> {
    check_model(model, ds, idx)?;
    let mut errors = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(4096) {
        let pred = model.values(&rows(ds, chunk))?;
        errors.extend(pred.iter().zip(chunk).map(|(p, &i)| p - ds.value(i)));
    }
    Ok(ErrorMetrics::from_errors(errors))
}

/// Jacobian errors pooled over every dimension of every row in `idx`.
/// `errors` is row-major, `idx.len() × D`.
pub fn jacobian_metrics(model: &dyn CvFunction, ds: &LabeledDataset, idx: &[usize]) -> Result<ErrorMetrics> {
    check_model(model, ds, idx)?;
    let mut errors = Vec::with_capacity(idx.len() * ds.dim());
    for chunk in idx.chunks(4096) {
        let jac = model.jacobians(&rows(ds, chunk))?;
        for (j, &i) in jac.iter().zip(chunk) {
            errors.extend(j.iter().zip(ds.jacobian(i)).map(|(p, t)| p - t));
        }
    }
    Ok(ErrorMetrics::from_errors(errors))
}

/// Equal-width bins over `[lo, hi]`. Out-of-range values land in the edge
/// bins and are counted in `clipped`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub clipped: u64,
}

fn bin_index(v: f64, lo: f64, hi: f64, n: usize) -> (usize, bool) {
    if v.is_nan() {
        return (0, true);
    }
    if v < lo {
        return (0, true);
    }
    if v > hi {
        return (n - 1, true);
    }
    let k = ((v - lo) / (hi - lo) * n as f64).floor() as usize;
    (k.min(n - 1), false)
}

fn check_bins(n_bins: usize, range: (f64, f64)) -> Result<()> {
    if n_bins == 0 || !(range.1 > range.0) || !range.0.is_finite() || !range.1.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need n_bins > 0 and a finite range with lo < hi, got {n_bins} bins over {range:?}"
        )));
    }
    Ok(())
}

/// Observed `[min, max]` of the given values, widened when degenerate.
pub fn data_range<'a>(values: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (-0.5, 0.5)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

pub fn histogram(values: &[f64], n_bins: usize, range: (f64, f64)) -> Result<Histogram> {
    check_bins(n_bins, range)?;
    let mut counts = vec![0u64; n_bins];
    let mut clipped = 0;
    for &v in values {
        let (k, c) = bin_index(v, range.0, range.1, n_bins);
        counts[k] += 1;
        clipped += c as u64;
    }
    Ok(Histogram {
        lo: range.0,
        hi: range.1,
        counts,
        clipped,
    })
}

/// 2-D histogram with the analytical value on the row axis and the
/// prediction on the column axis, both binned over the same range.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub lo: f64,
    pub hi: f64,
    pub n_bins: usize,
    /// Row-major `n_bins × n_bins`.
    pub counts: Vec<u64>,
    pub clipped: u64,
}

impl Heatmap {
    pub fn get(&self, analytical_bin: usize, predicted_bin: usize) -> u64 {
        self.counts[analytical_bin * self.n_bins + predicted_bin]
    }

    /// Counts summed over predictions: the analytical-value histogram.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.n_bins).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.n_bins)
            .map(|j| (0..self.n_bins).map(|i| self.get(i, j)).sum())
            .collect()
    }

    /// Plain-text grid: a comment header, then one line of counts per
    /// analytical bin.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# heatmap rows=analytical cols=predicted bins={} lo={} hi={} clipped={}\n",
            self.n_bins, self.lo, self.hi, self.clipped
        );
        for row in self.counts.chunks(self.n_bins) {
            let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

pub fn heatmap_bins(analytical: &[f64], predicted: &[f64], n_bins: usize, range: (f64, f64)) -> Result<Heatmap> {
    if analytical.len() != predicted.len() {
        return Err(Error::Dimension {
            expected: analytical.len(),
            got: predicted.len(),
        });
    }
    check_bins(n_bins, range)?;
    let mut counts = vec![0u64; n_bins * n_bins];
    let mut clipped = 0;
    for (&a, &p) in analytical.iter().zip(predicted) {
        let (i, ca) = bin_index(a, range.0, range.1, n_bins);
        let (j, cp) = bin_index(p, range.0, range.1, n_bins);
        counts[i * n_bins + j] += 1;
        clipped += (ca || cp) as u64;
    }
    Ok(Heatmap {
        lo: range.0,
        hi: range.1,
        n_bins,
        counts,
        clipped,
    })
}

/// Sample moments of an error distribution. Skewness and excess kurtosis
/// are `None` when the variance is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
}

pub fn gaussianity_summary(errors: &[f64]) -> Result<Moments> {
    if errors.len() < 8 {
        return Err(Error::InvalidArgument(format!(
            "need at least 8 samples for moments, got {}",
            errors.len()
        )));
    }
    let n = errors.len() as f64;
    let constant = errors.iter().all(|&e| e == errors[0]);
    let mean = if constant { errors[0] } else { errors.iter().sum::<f64>() / n };
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &e in errors {
        let d = e - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skewness, excess_kurtosis) = if !constant && m2 > 0.0 {
        (Some(m3 / m2.powf(1.5)), Some(m4 / (m2 * m2) - 3.0))
    } else {
        (None, None)
    };
    Ok(Moments {
        n: errors.len(),
        mean,
        std: m2.sqrt(),
        skewness,
        excess_kurtosis,
    })
}

/// Result of comparing reverse-mode Jacobians with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// `max_i |J_i − FD_i| / max(‖J‖∞, ‖FD‖∞)` over checked samples.
    pub max_rel_err: f64,
    pub worst_row: Option<usize>,
    pub worst_input: Option<Vec<f64>>,
    pub checked: usize,
    /// Rows whose ±h stencil crosses a ReLU kink, the |ŷ| kink or a wrap
    /// discontinuity; central differences are meaningless there.
    pub skipped: Vec<usize>,
}

/// Scale-aware relative error between two gradient vectors.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn crosses_wrap(model: &Mlp, v: f64, h: f64) -> bool {
    let b = model.sim_box();
    let w = b.wrap(v);
    ((b.wrap(v + h) - w) - h).abs() > 0.5 * h || ((w - b.wrap(v - h)) - h).abs() > 0.5 * h
}

/// Cross-check `jacobian` against central differences of `model`'s
/// forward pass on `n_samples` rows drawn (seeded) from `inputs`.
pub fn fd_crosscheck_with(
    model: &Mlp,
    jacobian: impl Fn(&[f64]) -> Result<Vec<f64>>,
    inputs: &[&[f64]],
    h: f64,
    n_samples: usize,
    seed: u64,
) -> Result<FdReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, inputs.len(), n_samples.min(inputs.len())).into_vec();
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_row: None,
        worst_input: None,
        checked: 0,
        skipped: Vec::new(),
    };
    let mut x = Vec::new();
    'rows: for row in picks {
        x.clear();
        x.extend_from_slice(inputs[row]);
        let base = model.activation_pattern(&x)?;
        if x.iter().any(|&v| crosses_wrap(model, v, h)) {
            report.skipped.push(row);
            continue;
        }
        let mut fd = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + h;
            if model.activation_pattern(&x)? != base {
                report.skipped.push(row);
                continue 'rows;
            }
            let fp = model.predict(&x)?;
            x[i] = orig - h;
            if model.activation_pattern(&x)? != base {
                report.skipped.push(row);
                continue 'rows;
            }
            let fm = model.predict(&x)?;
            x[i] = orig;
            fd.push((fp - fm) / (2.0 * h));
        }
        let j = jacobian(&x)?;
        let err = relative_error(&j, &fd);
        report.checked += 1;
        if err > report.max_rel_err || report.worst_row.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            if err >= report.max_rel_err {
                report.worst_row = Some(row);
                report.worst_input = Some(x.clone());
            }
        }
    }
    Ok(report)
}

/// [`fd_crosscheck_with`] using the model's own reverse-mode Jacobian.
pub fn fd_crosscheck(model: &Mlp, inputs: &[&[f64]], h: f64, n_samples: usize, seed: u64) -> Result<FdReport> {
    fd_crosscheck_with(model, |x| Ok(model.input_jacobian(x)?.grad), inputs, h, n_samples, seed)
}

pub fn value_units(kind: CvKind) -> &'static str {
    match kind {
        CvKind::Distance => "nm",
        CvKind::Coordination => "count",
    }
}

pub fn jacobian_units(kind: CvKind) -> &'static str {
    match kind {
        CvKind::Distance => "dimensionless",
        CvKind::Coordination => "nm^-1",
    }
}

pub const EVAL_REPORT_FORMAT: &str = "cvsurrogate-eval-report";
pub const EVAL_REPORT_VERSION: u32 = 1;

/// Serialised summary of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub cv: String,
    pub model: String,
    pub rows: usize,
    pub value_units: String,
    pub jacobian_units: String,
    pub value_rmse: f64,
    pub value_mae: f64,
    pub jacobian_rmse: f64,
    pub jacobian_mae: f64,
    pub value_error_moments: Option<Moments>,
    pub jacobian_error_moments: Option<Moments>,
    pub value_error_histogram: Histogram,
    pub jacobian_error_histogram: Histogram,
}

/// Everything `eval` produces: the report plus the bulky heatmaps and raw
/// error vectors that go into separate data files.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub value: ErrorMetrics,
    pub jacobian: ErrorMetrics,
    pub value_heatmap: Heatmap,
    pub jacobian_heatmap: Heatmap,
}

pub fn evaluate(
    model: &dyn CvFunction,
    model_label: &str,
    ds: &LabeledDataset,
    idx: &[usize],
    n_bins: usize,
) -> Result<Evaluation> {
    let value = value_metrics(model, ds, idx)?;
    let jacobian = jacobian_metrics(model, ds, idx)?;

    let truth: Vec<f64> = idx.iter().map(|&i| ds.value(i)).collect();
    let pred: Vec<f64> = truth.iter().zip(&value.errors).map(|(t, e)| t + e).collect();
    let jac_truth: Vec<f64> = idx.iter().flat_map(|&i| ds.jacobian(i).iter().copied()).collect();
    let jac_pred: Vec<f64> = jac_truth.iter().zip(&jacobian.errors).map(|(t, e)| t + e).collect();

    let value_heatmap = heatmap_bins(&truth, &pred, n_bins, data_range(truth.iter().chain(&pred)))?;
    let jacobian_heatmap =
        heatmap_bins(&jac_truth, &jac_pred, n_bins, data_range(jac_truth.iter().chain(&jac_pred)))?;
    let report = EvalReport {
        format: EVAL_REPORT_FORMAT.into(),
        version: EVAL_REPORT_VERSION,
        cv: ds.cv.to_string(),
        model: model_label.to_string(),
        rows: idx.len(),
        value_units: value_units(ds.cv).into(),
        jacobian_units: jacobian_units(ds.cv).into(),
        value_rmse: value.rmse,
        value_mae: value.mae,
        jacobian_rmse: jacobian.rmse,
        jacobian_mae: jacobian.mae,
        value_error_moments: gaussianity_summary(&value.errors).ok(),
        jacobian_error_moments: gaussianity_summary(&jacobian.errors).ok(),
        value_error_histogram: histogram(&value.errors, n_bins, data_range(&value.errors))?,
        jacobian_error_histogram: histogram(&jacobian.errors, n_bins, data_range(&jacobian.errors))?,
    };
    Ok(Evaluation {
        report,
        value,
        jacobian,
        value_heatmap,
        jacobian_heatmap,
    })
}

impl Evaluation {
    /// Table-style summary of the four headline metrics.
    pub fn summary(&self) -> String {
        let r = &self.report;
        let mut s = String::new();
        writeln!(s, "{:<10} {:>14} {:>14}", "metric", r.cv, "units").unwrap();
        writeln!(s, "{:<10} {:>14.6} {:>14}", "RMSE", r.value_rmse, r.value_units).unwrap();
        writeln!(s, "{:<10} {:>14.6} {:>14}", "MAE", r.value_mae, r.value_units).unwrap();
        writeln!(s, "{:<10} {:>14.6} {:>14}", "RMSE (J)", r.jacobian_rmse, r.jacobian_units).unwrap();
        writeln!(s, "{:<10} {:>14.6} {:>14}", "MAE (J)", r.jacobian_mae, r.jacobian_units).unwrap();
        s
    }

    /// Write the report and its data files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put("eval_report.toml", toml::to_string(&self.report).expect("report serialises"))?;
        put("value_heatmap.txt", self.value_heatmap.to_text())?;
        put("jacobian_heatmap.txt", self.jacobian_heatmap.to_text())?;
        put("value_error_histogram.csv", histogram_csv(&self.report.value_error_histogram))?;
        put("jacobian_error_histogram.csv", histogram_csv(&self.report.jacobian_error_histogram))?;
        put("value_errors.csv", column_csv("error", &self.value.errors))?;
        put("jacobian_errors.csv", column_csv("error", &self.jacobian.errors))?;
        Ok(())
    }
}

fn histogram_csv(h: &Histogram) -> String {
    let n = h.counts.len();
    let w = (h.hi - h.lo) / n as f64;
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for (k, c) in h.counts.iter().enumerate() {
        writeln!(s, "{},{},{}", h.lo + k as f64 * w, h.lo + (k + 1) as f64 * w, c).unwrap();
    }
    s
}

fn column_csv(name: &str, v: &[f64]) -> String {
    let mut s = format!("{name}\n");
    for x in v {
        writeln!(s, "{x}").unwrap();
    }
    s
}
