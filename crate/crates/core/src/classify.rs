//! Video-level decisions: majority voting over clip labels, nearest-neighbour
//! clip classification and evaluation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::labels::ClassSet;
use crate::spd::LogDescriptor;

/// Per-clip predictions for one video. Scores are "lower is better"
/// (residuals, divergences or distances).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClipLabelVector {
    pub labels: Vec<String>,
    pub scores: Vec<f64>,
}

impl ClipLabelVector {
    pub fn push(&mut self, label: impl Into<String>, score: f64) {
        self.labels.push(label.into());
        self.scores.push(score);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Modal clip label. Ties go to the label with the smallest mean score, then
/// to the lexicographically smallest label.
pub fn majority_vote(clips: &ClipLabelVector) -> Result<String> {
    if clips.is_empty() {
        return Err(Error::Empty("clip label vector"));
    }
    if clips.labels.len() != clips.scores.len() {
        return Err(Error::dims(clips.labels.len(), clips.scores.len()));
    }
    // label -> (count, score sum)
    let mut tally: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for (label, &score) in clips.labels.iter().zip(&clips.scores) {
        let e = tally.entry(label.as_str()).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += score;
    }
    let mut best: Option<(&str, usize, f64)> = None;
    for (label, (count, sum)) in tally {
        let mean = sum / count as f64;
        let better = match best {
            None => true,
            Some((_, bc, bm)) => count > bc || (count == bc && mean < bm),
        };
        if better {
            best = Some((label, count, mean));
        }
    }
    Ok(best.expect("non-empty tally").0.to_owned())
}

/// Label of the Euclidean-nearest training descriptor and its distance.
/// Ties go to the earliest training descriptor.
pub fn nn_classify_clip(query: &LogDescriptor, train: &[LogDescriptor]) -> Result<(String, f64)> {
    if train.is_empty() {
        return Err(Error::Empty("nearest-neighbour training set"));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in train.iter().enumerate() {
        if t.len() != query.len() {
            return Err(Error::dims(query.len(), t.len()));
        }
        let d2: f64 = t.values.iter().zip(&query.values).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.map_or(true, |(_, b)| d2 < b) {
            best = Some((i, d2));
        }
    }
    let (i, d2) = best.expect("non-empty training set");
    Ok((train[i].label().to_owned(), d2.sqrt()))
}

/// Confusion matrix and per-class rates.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split_id: String,
    pub method: String,
    pub feature_set: String,
    pub classes: Vec<String>,
    /// `confusion[truth][prediction]`.
    pub confusion: Vec<Vec<usize>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f_measure: Vec<f64>,
    pub accuracy: f64,
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn evaluate(predictions: &[String], ground_truth: &[String], classes: &ClassSet) -> Result<EvalReport> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::dims(ground_truth.len(), predictions.len()));
    }
    if predictions.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let k = classes.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (p, t) in predictions.iter().zip(ground_truth) {
        let ti = classes.id(t).ok_or_else(|| Error::UnknownLabel(t.clone()))?;
        let pi = classes.id(p).ok_or_else(|| Error::UnknownLabel(p.clone()))?;
        confusion[ti][pi] += 1;
    }
    let mut precision = vec![0.0; k];
    let mut recall = vec![0.0; k];
    let mut f = vec![0.0; k];
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        precision[c] = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        recall[c] = if actual > 0 { tp / actual as f64 } else { 0.0 };
        f[c] = f_measure(precision[c], recall[c]);
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    Ok(EvalReport {
        split_id: String::new(),
        method: String::new(),
        feature_set: String::new(),
        classes: classes.names().to_vec(),
        confusion,
        precision,
        recall,
        f_measure: f,
        accuracy: correct as f64 / predictions.len() as f64,
    })
}

/// Version line heading every machine-readable report.
pub const REPORT_HEADER: &str = "# covmotion eval-report v1";

impl EvalReport {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "method={} features={} split={} accuracy={:.4} ({}/{})",
            self.method,
            self.feature_set,
            self.split_id,
            self.accuracy,
            (0..self.classes.len()).map(|c| self.confusion[c][c]).sum::<usize>(),
            self.total()
        );
        let width = self.classes.iter().map(String::len).max().unwrap_or(5).max(5);
        let _ = writeln!(s, "{:<width$}  {:>9}  {:>9}  {:>9}", "class", "precision", "recall", "F");
        for (c, name) in self.classes.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}",
                name, self.precision[c], self.recall[c], self.f_measure[c]
            );
        }
        s
    }

    /// One `key=value` record per report, tab separated.
    pub fn to_record(&self) -> String {
        let per_class: Vec<String> = self
            .classes
            .iter()
            .enumerate()
            .map(|(c, n)| format!("{n}:{}/{}/{}", self.precision[c], self.recall[c], self.f_measure[c]))
            .collect();
        let confusion: Vec<String> = self
            .confusion
            .iter()
            .map(|row| row.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
            .collect();
        format!(
            "split={}\tmethod={}\tfeatures={}\taccuracy={}\tclasses={}\tprf={}\tconfusion={}",
            self.split_id,
            self.method,
            self.feature_set,
            self.accuracy,
            self.classes.join(","),
            per_class.join(","),
            confusion.join(";")
        )
    }

    /// Confusion matrix as delimiter-separated values with a header row.
    pub fn confusion_dsv(&self, delimiter: char) -> String {
        let mut s = String::from("truth\\predicted");
        for c in &self.classes {
            s.push(delimiter);
            s.push_str(c);
        }
        s.push('\n');
        for (name, row) in self.classes.iter().zip(&self.confusion) {
            s.push_str(name);
            for v in row {
                s.push(delimiter);
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
        s
    }
}

/// Machine-readable file holding several reports.
pub fn reports_to_records(reports: &[EvalReport]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.to_record());
        s.push('\n');
    }
    s
}
