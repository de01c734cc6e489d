//! AUROC, average precision and mean predicted probability on positives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::sigmoid;
use crate::tensor_io::Manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    #[default]
    Probability,
    Logit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSamples {
    pub class: String,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub kind: ScoreKind,
}

impl ScoredSamples {
    pub fn new(
        class: impl Into<String>,
        scores: Vec<f64>,
        labels: Vec<u8>,
        kind: ScoreKind,
    ) -> Result<Self> {
        if scores.is_empty() || scores.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} scores and {} labels; need equal nonzero lengths",
                scores.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::invalid("scores contain NaN"));
        }
        if kind == ScoreKind::Probability && scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::invalid("probability scores must lie in [0, 1]"));
        }
        Ok(ScoredSamples {
            class: class.into(),
            scores,
            labels,
            kind,
        })
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn n_neg(&self) -> usize {
        self.labels.len() - self.n_pos()
    }

    fn probability(&self, i: usize) -> f64 {
        match self.kind {
            ScoreKind::Probability => self.scores[i],
            ScoreKind::Logit => sigmoid(self.scores[i]),
        }
    }
}

/// Mann-Whitney form with mid-ranks for ties:
/// `(#ordered pos/neg pairs + 0.5 * #tied pairs) / (N+ * N-)`.
pub fn auroc(samples: &ScoredSamples) -> Result<f64> {
    let (n_pos, n_neg) = (samples.n_pos(), samples.n_neg());
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid(format!(
            "AUROC of {:?} needs both classes (N+ = {n_pos}, N- = {n_neg})",
            samples.class
        )));
    }
    let scores = &samples.scores;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1..=end share their mean
        let mid_rank = (start + end + 1) as f64 / 2.0;
        let pos_in_group = order[start..end]
            .iter()
            .filter(|&&i| samples.labels[i] == 1)
            .count();
        pos_rank_sum += mid_rank * pos_in_group as f64;
        start = end;
    }
    let n_pos = n_pos as f64;
    let u = pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg as f64))
}

/// Non-interpolated AP over descending-score prefixes. Within a tie,
/// positives rank after negatives; otherwise input order is kept.
pub fn average_precision(samples: &ScoredSamples) -> Result<f64> {
    let n_pos = samples.n_pos();
    if n_pos == 0 {
        return Err(Error::invalid(format!(
            "average precision of {:?} needs at least one positive",
            samples.class
        )));
    }
    let ranking = precision_ranking(samples);
    let mut hits = 0usize;
    let mut total = 0.0;
    for (k, &i) in ranking.iter().enumerate() {
        if samples.labels[i] == 1 {
            hits += 1;
            total += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(total / n_pos as f64)
}

/// Sample indices in the ranking order used by [`average_precision`].
pub fn precision_ranking(samples: &ScoredSamples) -> Vec<usize> {
    let mut order: Vec<usize> = (0..samples.scores.len()).collect();
    order.sort_by(|&a, &b| {
        samples.scores[b]
            .total_cmp(&samples.scores[a])
            .then_with(|| samples.labels[a].cmp(&samples.labels[b]))
    });
    order
}

/// Mean predicted probability over positive samples.
pub fn mean_predicted_prob(samples: &ScoredSamples) -> Result<f64> {
    let positives: Vec<usize> = (0..samples.labels.len())
        .filter(|&i| samples.labels[i] == 1)
        .collect();
    if positives.is_empty() {
        return Err(Error::invalid(format!(
            "mean predicted probability of {:?} needs at least one positive",
            samples.class
        )));
    }
    let sum: f64 = positives.iter().map(|&i| samples.probability(i)).sum();
    Ok(sum / positives.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub class: String,
    pub auroc: Option<f64>,
    pub ap: Option<f64>,
    pub mean_prob: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

pub const AVERAGE_ROW: &str = "Average";

/// One row per class; with more than one class an `Average` row holds the
/// class-wise mean of each metric over the classes where it is defined.
pub fn metrics_report(per_class: &[ScoredSamples]) -> MetricsReport {
    let mut rows: Vec<MetricsRow> = per_class
        .iter()
        .map(|s| MetricsRow {
            class: s.class.clone(),
            auroc: auroc(s).ok(),
            ap: average_precision(s).ok(),
            mean_prob: mean_predicted_prob(s).ok(),
            n_pos: s.n_pos(),
            n_neg: s.n_neg(),
        })
        .collect();
    if rows.len() > 1 {
        let mean = |f: fn(&MetricsRow) -> Option<f64>| {
            let vals: Vec<f64> = rows.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let average = MetricsRow {
            class: AVERAGE_ROW.to_string(),
            auroc: mean(|r| r.auroc),
            ap: mean(|r| r.ap),
            mean_prob: mean(|r| r.mean_prob),
            n_pos: rows.iter().map(|r| r.n_pos).sum(),
            n_neg: rows.iter().map(|r| r.n_neg).sum(),
        };
        rows.push(average);
    }
    MetricsReport { rows }
}

/// Per-class metrics from the logits stored with every manifest image.
pub fn manifest_metrics(manifest: &Manifest) -> Result<MetricsReport> {
    let (logits, labels) = manifest.load_logit_matrix()?;
    let m = manifest.num_classes();
    let per_class = manifest
        .class_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            ScoredSamples::new(
                name.clone(),
                logits.iter().skip(k).step_by(m).copied().collect(),
                labels.iter().skip(k).step_by(m).copied().collect(),
                ScoreKind::Logit,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(metrics_report(&per_class))
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut write = |record: [String; 6]| w.write_record(&record).expect("in-memory csv write");
        write(["class", "auroc", "ap", "mean_prob", "n_pos", "n_neg"].map(String::from));
        for r in &self.rows {
            write([
                r.class.clone(),
                cell(r.auroc),
                cell(r.ap),
                cell(r.mean_prob),
                r.n_pos.to_string(),
                r.n_neg.to_string(),
            ]);
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush"))
            .expect("csv output is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(scores: &[f64], labels: &[u8]) -> ScoredSamples {
        ScoredSamples::new(
            "c",
            scores.to_vec(),
            labels.to_vec(),
            ScoreKind::Probability,
        )
        .unwrap()
    }

    #[test]
    fn perfect_separation() {
        let s = probs(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]);
        assert_eq!(auroc(&s).unwrap(), 1.0);
        assert_eq!(average_precision(&s).unwrap(), 1.0);
    }

    #[test]
    fn all_ties() {
        let s = probs(&[0.3; 6], &[1, 0, 1, 0, 0, 1]);
        assert_eq!(auroc(&s).unwrap(), 0.5);
    }

    #[test]
    fn positive_ranked_second_of_four() {
        let s = probs(&[0.9, 0.7, 0.5, 0.1], &[0, 1, 0, 0]);
        assert_eq!(average_precision(&s).unwrap(), 0.5);
    }

    #[test]
    fn ties_rank_positives_last_for_ap() {
        // the tie at 0.5 places the negative first: precision 1/2 at the positive
        let s = probs(&[0.5, 0.5], &[1, 0]);
        assert_eq!(average_precision(&s).unwrap(), 0.5);
    }

    #[test]
    fn single_class_errors() {
        let s = probs(&[0.1, 0.2], &[1, 1]);
        assert!(auroc(&s).is_err());
        let s = probs(&[0.1, 0.2], &[0, 0]);
        assert!(average_precision(&s).is_err());
        assert!(mean_predicted_prob(&s).is_err());
    }

    #[test]
    fn mean_prob_examples() {
        let s = probs(&[0.7, 0.1, 0.7, 0.7], &[1, 0, 1, 1]);
        assert!((mean_predicted_prob(&s).unwrap() - 0.7).abs() < 1e-15);
        let s = probs(&[0.2, 0.9, 0.95], &[1, 0, 0]);
        assert_eq!(mean_predicted_prob(&s).unwrap(), 0.2);
        let logits = ScoredSamples::new("c", vec![0.0, 3.0], vec![1, 0], ScoreKind::Logit).unwrap();
        assert_eq!(mean_predicted_prob(&logits).unwrap(), 0.5);
    }

    #[test]
    fn report_rows_and_average() {
        let a = probs(&[0.9, 0.1], &[1, 0]);
        let b = probs(&[0.2, 0.8], &[1, 0]);
        let report = metrics_report(&[a.clone(), b]);
        assert_eq!(report.rows.len(), 3);
        let avg = &report.rows[2];
        assert_eq!(avg.class, AVERAGE_ROW);
        assert_eq!(avg.auroc, Some(0.5));
        assert_eq!((avg.n_pos, avg.n_neg), (2, 2));

        let single = metrics_report(&[a]);
        assert_eq!(single.rows.len(), 1);
        assert!(single
            .to_csv()
            .starts_with("class,auroc,ap,mean_prob,n_pos,n_neg\nc,1,1,0.9,1,1"));
    }
}
