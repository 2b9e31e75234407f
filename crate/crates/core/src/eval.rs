//! Error metrics against sparse ordinal annotations.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{DepthMap, OrderingAnnotation};
use crate::error::{Error, Result};

fn check_pair(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} ground-truth values",
            pred.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::EmptyEvaluation("no points".into()));
    }
    if let Some(g) = gt.iter().find(|&&g| !(g > 0.0 && g.is_finite())) {
        return Err(Error::Domain(format!("ground-truth depth {g} is not positive")));
    }
    Ok(())
}

/// Mean of `|p - g| / g`.
pub fn abs_rel(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs() / g).sum::<f64>() / gt.len() as f64)
}

/// Mean of `(p - g)^2 / g`.
pub fn sq_rel(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).powi(2) / g).sum::<f64>() / gt.len() as f64)
}

pub fn rmse(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok((pred.iter().zip(gt).map(|(p, g)| (p - g).powi(2)).sum::<f64>() / gt.len() as f64).sqrt())
}

pub fn rmse_log(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair(pred, gt)?;
    if let Some(p) = pred.iter().find(|&&p| !(p > 0.0)) {
        return Err(Error::Domain(format!("predicted depth {p} is not positive")));
    }
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| (p.ln() - g.ln()).powi(2)).sum();
    Ok((sum / gt.len() as f64).sqrt())
}

/// Depth value per entry: distinct `(l1, l2)` pairs ranked 1..K in
/// lexicographic order, mapped to `rank / K`.
pub fn ordering_to_depth(a: &OrderingAnnotation) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Err(Error::EmptyEvaluation("annotation has no entries".into()));
    }
    let mut ranks: Vec<(u32, u32)> = a.entries.iter().map(|e| e.rank()).collect();
    ranks.sort_unstable();
    ranks.dedup();
    let k = ranks.len() as f64;
    Ok(a.entries
        .iter()
        .map(|e| {
            let r = ranks.binary_search(&e.rank()).expect("rank present");
            (r + 1) as f64 / k
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    None,
    #[default]
    MedianScale,
}

impl std::str::FromStr for AlignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "median" | "median_scale" => Ok(Self::MedianScale),
            other => Err(Error::Config(format!("unknown alignment {other:?}"))),
        }
    }
}

/// Median; even lengths average the two middle values.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyEvaluation("median of nothing".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Aligns predictions to the ground truth's scale.
pub fn align(pred: &[f64], gt: &[f64], mode: AlignmentMode) -> Result<Vec<f64>> {
    match mode {
        AlignmentMode::None => Ok(pred.to_vec()),
        AlignmentMode::MedianScale => {
            let (mp, mg) = (median(pred)?, median(gt)?);
            if mp == 0.0 || mg == 0.0 {
                return Err(Error::Domain("median scaling with a zero median".into()));
            }
            // dividing first keeps the result exact when pred is a scaled gt
            Ok(pred.iter().map(|p| p / mp * mg).collect())
        }
    }
}

/// Fraction of strictly ordered entry pairs whose predictions are ordered
/// the same way. Ties in the prediction count as wrong.
pub fn ordinal_accuracy(pred: &[f64], a: &OrderingAnnotation) -> Result<f64> {
    if pred.len() != a.len() {
        return Err(Error::Shape(format!("{} predictions for {} entries", pred.len(), a.len())));
    }
    let (mut correct, mut total) = (0usize, 0usize);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            let want = a.entries[i].depth_cmp(&a.entries[j]);
            if want == Ordering::Equal {
                continue;
            }
            total += 1;
            correct += usize::from(pred[i].partial_cmp(&pred[j]) == Some(want));
        }
    }
    if total == 0 {
        return Err(Error::EmptyEvaluation("no strictly ordered pairs".into()));
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    /// `None` when no pair of entries is strictly ordered.
    pub ordinal_accuracy: Option<f64>,
    pub n_points: usize,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct")
    }

    /// Plain-text table, one header row and one value row.
    pub fn table(&self) -> String {
        let ord = self.ordinal_accuracy.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let cells = [
            ("AbsRel", format!("{:.4}", self.abs_rel)),
            ("SqRel", format!("{:.4}", self.sq_rel)),
            ("RMSE", format!("{:.4}", self.rmse)),
            ("RMSE log", format!("{:.4}", self.rmse_log)),
            ("Ordinal", ord),
            ("Points", self.n_points.to_string()),
        ];
        let widths: Vec<usize> = cells.iter().map(|(h, v)| h.len().max(v.len())).collect();
        let row = |f: &dyn Fn(usize) -> String| {
            (0..cells.len())
                .map(|i| format!("{:>w$}", f(i), w = widths[i]))
                .collect::<Vec<_>>()
                .join("  ")
        };
        format!(
            "{}\n{}\n",
            row(&|i| cells[i].0.to_string()),
            row(&|i| cells[i].1.clone())
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

/// Samples `pred` at the annotated pixels, aligns, and scores against the
/// rank depths.
pub fn evaluate(pred: &DepthMap, a: &OrderingAnnotation, mode: AlignmentMode) -> Result<MetricsReport> {
    let gt = ordering_to_depth(a)?;
    let (h, w) = (pred.height(), pred.width());
    let mut sampled = Vec::with_capacity(a.len());
    for e in &a.entries {
        if e.x as usize >= w || e.y as usize >= h {
            return Err(Error::OutOfBounds {
                x: e.x,
                y: e.y,
                width: w,
                height: h,
            });
        }
        sampled.push(pred.get(e.y as usize, e.x as usize));
    }
    let aligned = align(&sampled, &gt, mode)?;
    let ordinal = match ordinal_accuracy(&sampled, a) {
        Ok(v) => Some(v),
        Err(Error::EmptyEvaluation(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        abs_rel: abs_rel(&aligned, &gt)?,
        sq_rel: sq_rel(&aligned, &gt)?,
        rmse: rmse(&aligned, &gt)?,
        rmse_log: rmse_log(&aligned, &gt)?,
        ordinal_accuracy: ordinal,
        n_points: gt.len(),
    })
}

/// Averages reports, weighting each by its point count. Ordinal accuracy
/// is averaged over the reports that have one.
pub fn mean_report(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let n: usize = reports.iter().map(|r| r.n_points).sum();
    if n == 0 {
        return Err(Error::EmptyEvaluation("no reports".into()));
    }
    let wmean = |f: fn(&MetricsReport) -> f64| {
        reports.iter().map(|r| f(r) * r.n_points as f64).sum::<f64>() / n as f64
    };
    let ords: Vec<f64> = reports.iter().filter_map(|r| r.ordinal_accuracy).collect();
    Ok(MetricsReport {
        abs_rel: wmean(|r| r.abs_rel),
        sq_rel: wmean(|r| r.sq_rel),
        // pool squared errors before the root
        rmse: wmean(|r| r.rmse * r.rmse).sqrt(),
        rmse_log: wmean(|r| r.rmse_log * r.rmse_log).sqrt(),
        ordinal_accuracy: (!ords.is_empty()).then(|| ords.iter().sum::<f64>() / ords.len() as f64),
        n_points: n,
    })
}
