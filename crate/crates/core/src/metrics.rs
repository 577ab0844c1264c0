//! Detection evaluation and the soft-F1 training loss.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::Annotation;
use crate::detector::{Detection, GridPrediction};
use crate::geom::iou;
use crate::{Error, Result, FORMAT_VERSION};

/// Smoothing term in the soft-F1 denominator.
pub const SOFT_F1_EPS: f64 = 1e-7;

/// True-positive criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "threshold")]
pub enum MatchMode {
    /// The prediction's box center lies inside an unmatched ground-truth box.
    CentroidInBox,
    /// The best unmatched ground-truth box has IoU at least the threshold.
    IouAt(f64),
}

impl Default for MatchMode {
    fn default() -> Self {
        MatchMode::IouAt(0.5)
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchMode::CentroidInBox => write!(f, "centroid_in_box"),
            MatchMode::IouAt(t) => write!(f, "iou@{t}"),
        }
    }
}

impl std::str::FromStr for MatchMode {
    type Err = Error;

    /// Accepts `centroid`, `centroid_in_box`, `iou` (0.5) or `iou@<t>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centroid" | "centroid_in_box" => Ok(MatchMode::CentroidInBox),
            "iou" => Ok(MatchMode::IouAt(0.5)),
            _ => {
                let t = s
                    .strip_prefix("iou@")
                    .and_then(|t| t.parse::<f64>().ok())
                    .filter(|t| *t > 0.0 && *t <= 1.0)
                    .ok_or_else(|| Error::InvalidValue(format!("unknown match mode `{s}`")))?;
                Ok(MatchMode::IouAt(t))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Matching {
    /// `(prediction index, ground-truth index)` for every true positive.
    pub pairs: Vec<(usize, usize)>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Greedy one-to-one matching of one image's predictions to its ground truth.
///
/// Predictions are visited by descending confidence (ties in canonical box
/// order). Ground truth of a different class is never matched.
pub fn match_to_gt(preds: &[Detection], gt: &[Annotation], mode: MatchMode) -> Matching {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .total_cmp(&preds[a].confidence)
            .then_with(|| preds[a].canonical_cmp(&preds[b]))
    });
    let mut taken = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for p in order {
        let d = &preds[p];
        let candidates = gt
            .iter()
            .enumerate()
            .filter(|(g, a)| !taken[*g] && a.class_id == d.class_id);
        let chosen = match mode {
            MatchMode::CentroidInBox => {
                let (cx, cy) = d.bbox.center();
                candidates
                    .filter(|(_, a)| a.bbox.contains_point(cx, cy))
                    .map(|(g, a)| (g, iou(&d.bbox, &a.bbox)))
                    .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)))
                    .map(|(g, _)| g)
            }
            MatchMode::IouAt(t) => candidates
                .map(|(g, a)| (g, iou(&d.bbox, &a.bbox)))
                .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)))
                .filter(|&(_, v)| v >= t)
                .map(|(g, _)| g),
        };
        if let Some(g) = chosen {
            taken[g] = true;
            pairs.push((p, g));
        }
    }
    let tp = pairs.len();
    Matching {
        pairs,
        tp,
        fp: preds.len() - tp,
        fn_: gt.len() - tp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn prf1_counts(tp: usize, fp: usize, fn_: usize) -> Prf1 {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf1 {
        precision,
        recall,
        f1,
    }
}

pub fn prf1(m: &Matching) -> Prf1 {
    prf1_counts(m.tp, m.fp, m.fn_)
}

/// Mean absolute difference between predicted and ground-truth counts.
pub fn count_mae(counts: &[(usize, usize)]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::Empty("count list"));
    }
    let sum: f64 = counts
        .iter()
        .map(|&(p, g)| (p as f64 - g as f64).abs())
        .sum();
    Ok(sum / counts.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub image_id: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pred_count: usize,
    pub gt_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub images: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub count_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub match_mode: MatchMode,
    /// Echo of the run configuration that produced the predictions.
    pub config: serde_json::Value,
    pub aggregate: Aggregate,
    pub per_image: Vec<ImageEval>,
}

pub const REPORT_FORMAT: &str = "adaptile-eval";

/// One image's inputs to [`evaluate`].
pub struct EvalInput<'a> {
    pub image_id: &'a str,
    pub preds: &'a [Detection],
    pub gt: &'a [Annotation],
}

pub fn evaluate_image(input: &EvalInput<'_>, mode: MatchMode) -> ImageEval {
    let m = match_to_gt(input.preds, input.gt, mode);
    ImageEval {
        image_id: input.image_id.to_string(),
        tp: m.tp,
        fp: m.fp,
        fn_: m.fn_,
        pred_count: input.preds.len(),
        gt_count: input.gt.len(),
    }
}

/// Aggregates per-image results: sums counts, then derives rates.
pub fn aggregate(per_image: &[ImageEval]) -> Result<Aggregate> {
    let (tp, fp, fn_) = per_image
        .iter()
        .fold((0, 0, 0), |(a, b, c), e| (a + e.tp, b + e.fp, c + e.fn_));
    let counts: Vec<(usize, usize)> = per_image.iter().map(|e| (e.pred_count, e.gt_count)).collect();
    let rates = prf1_counts(tp, fp, fn_);
    Ok(Aggregate {
        images: per_image.len(),
        tp,
        fp,
        fn_,
        precision: rates.precision,
        recall: rates.recall,
        f1: rates.f1,
        count_mae: count_mae(&counts)?,
    })
}

pub fn evaluate(inputs: &[EvalInput<'_>], mode: MatchMode, config: serde_json::Value) -> Result<EvalReport> {
    let per_image: Vec<ImageEval> = inputs.iter().map(|i| evaluate_image(i, mode)).collect();
    Ok(EvalReport {
        format: REPORT_FORMAT.into(),
        version: FORMAT_VERSION,
        match_mode: mode,
        config,
        aggregate: aggregate(&per_image)?,
        per_image,
    })
}

impl EvalReport {
    /// Flat per-image table: `image_id,tp,fp,fn,pred_count,gt_count`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image_id", "tp", "fp", "fn", "pred_count", "gt_count"])?;
        for e in &self.per_image {
            w.write_record([
                e.image_id.clone(),
                e.tp.to_string(),
                e.fp.to_string(),
                e.fn_.to_string(),
                e.pred_count.to_string(),
                e.gt_count.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidValue(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    /// Same layout as the score grid.
    pub gradient: Vec<f64>,
}

/// Soft-F1 loss over the object classes of a score grid, with its gradient.
///
/// Per class `c`, with `p` the scores and `y` the binary targets:
/// `tp = sum p*y`, `fp = sum p*(1-y)`, `fn = sum (1-p)*y`,
/// `F_c = 2tp / (2tp + fp + fn + eps)`, and `loss = 1 - mean_c F_c`.
///
/// The denominator simplifies to `D = sum p + sum y + eps`, so
/// `dF_c/dp_i = (2 y_i D - 2 tp) / D^2`.
pub fn soft_f1_loss(scores: &GridPrediction, targets: &GridPrediction) -> Result<LossResult> {
    if scores.grid_n != targets.grid_n || scores.num_classes != targets.num_classes {
        return Err(Error::Shape(format!(
            "scores {0}x{0}x{1} vs targets {2}x{2}x{3}",
            scores.grid_n, scores.num_classes, targets.grid_n, targets.num_classes
        )));
    }
    if let Some(s) = scores.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidValue(format!("score {s} outside [0, 1]")));
    }
    if let Some(t) = targets.scores.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::InvalidValue(format!("target {t} is not 0 or 1")));
    }
    let c_n = scores.num_classes;
    if c_n == 0 {
        return Err(Error::Shape("grid has no object classes".into()));
    }
    let (p, y) = (&scores.scores, &targets.scores);
    let mut tp = vec![0.0; c_n];
    let mut sum_p = vec![0.0; c_n];
    let mut sum_y = vec![0.0; c_n];
    for i in 0..p.len() {
        let c = i % c_n;
        tp[c] += p[i] * y[i];
        sum_p[c] += p[i];
        sum_y[c] += y[i];
    }
    let denom: Vec<f64> = (0..c_n).map(|c| sum_p[c] + sum_y[c] + SOFT_F1_EPS).collect();
    let mean_f1 = (0..c_n).map(|c| 2.0 * tp[c] / denom[c]).sum::<f64>() / c_n as f64;
    let scale = -1.0 / c_n as f64;
    let gradient = (0..p.len())
        .map(|i| {
            let c = i % c_n;
            let d = denom[c];
            scale * (2.0 * y[i] * d - 2.0 * tp[c]) / (d * d)
        })
        .collect();
    Ok(LossResult {
        loss: (1.0 - mean_f1).clamp(0.0, 1.0),
        gradient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::BBox;

    fn det(b: [f64; 4], conf: f64) -> Detection {
        Detection::new(1, BBox::try_from(b).unwrap(), conf).unwrap()
    }

    fn gt(b: [f64; 4]) -> Annotation {
        Annotation {
            class_id: 1,
            bbox: BBox::try_from(b).unwrap(),
        }
    }

    #[test]
    fn exact_predictions_all_tp() {
        let g = vec![gt([0.0, 0.0, 10.0, 10.0]), gt([20.0, 20.0, 30.0, 35.0])];
        let p: Vec<Detection> = g.iter().map(|a| Detection::new(1, a.bbox, 0.9).unwrap()).collect();
        for mode in [MatchMode::CentroidInBox, MatchMode::IouAt(0.5)] {
            let m = match_to_gt(&p, &g, mode);
            assert_eq!((m.tp, m.fp, m.fn_), (2, 0, 0));
            assert_eq!(prf1(&m), Prf1 { precision: 1.0, recall: 1.0, f1: 1.0 });
        }
    }

    #[test]
    fn partial_match_counts() {
        let g = vec![
            gt([0.0, 0.0, 10.0, 10.0]),
            gt([20.0, 0.0, 30.0, 10.0]),
            gt([40.0, 0.0, 50.0, 10.0]),
            gt([60.0, 0.0, 70.0, 10.0]),
        ];
        let p = vec![
            det([1.0, 1.0, 9.0, 9.0], 0.9),
            det([21.0, 1.0, 29.0, 9.0], 0.8),
            det([100.0, 100.0, 110.0, 110.0], 0.7),
        ];
        let m = match_to_gt(&p, &g, MatchMode::CentroidInBox);
        assert_eq!((m.tp, m.fp, m.fn_), (2, 1, 2));
        let r = prf1(&m);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.recall - 0.5).abs() < 1e-15);
        assert!((r.f1 - 4.0 / 7.0).abs() < 1e-15);
        assert!((r.f1 - 0.5714).abs() < 1e-4);
    }

    #[test]
    fn matching_is_one_to_one() {
        let g = vec![gt([0.0, 0.0, 10.0, 10.0])];
        let p = vec![det([4.0, 4.0, 6.0, 6.0], 0.9), det([3.0, 3.0, 7.0, 7.0], 0.8)];
        let m = match_to_gt(&p, &g, MatchMode::CentroidInBox);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 0));
        assert_eq!(m.pairs, vec![(0, 0)]);
    }

    #[test]
    fn iou_threshold_applies() {
        let g = vec![gt([0.0, 0.0, 10.0, 10.0])];
        let p = vec![det([5.0, 0.0, 15.0, 10.0], 0.9)];
        assert_eq!(match_to_gt(&p, &g, MatchMode::IouAt(0.5)).tp, 0);
        assert_eq!(match_to_gt(&p, &g, MatchMode::IouAt(0.3)).tp, 1);
    }

    #[test]
    fn prf1_zero_guard() {
        assert_eq!(
            prf1_counts(0, 0, 5),
            Prf1 { precision: 0.0, recall: 0.0, f1: 0.0 }
        );
        assert_eq!(prf1_counts(0, 0, 0).f1, 0.0);
    }

    #[test]
    fn count_mae_examples() {
        assert_eq!(count_mae(&[(3, 3), (7, 7)]).unwrap(), 0.0);
        assert_eq!(count_mae(&[(3, 4), (5, 5)]).unwrap(), 0.5);
        assert_eq!(count_mae(&[(0, 10)]).unwrap(), 10.0);
        assert!(count_mae(&[]).is_err());
    }

    #[test]
    fn match_mode_parsing() {
        assert_eq!("centroid".parse::<MatchMode>().unwrap(), MatchMode::CentroidInBox);
        assert_eq!("iou".parse::<MatchMode>().unwrap(), MatchMode::IouAt(0.5));
        assert_eq!("iou@0.3".parse::<MatchMode>().unwrap(), MatchMode::IouAt(0.3));
        assert!("iou@2".parse::<MatchMode>().is_err());
    }

    #[test]
    fn csv_columns() {
        let preds = [det([0.0, 0.0, 10.0, 10.0], 0.9)];
        let g = [gt([0.0, 0.0, 10.0, 10.0]), gt([50.0, 50.0, 60.0, 60.0])];
        let r = evaluate(
            &[EvalInput {
                image_id: "im,1",
                preds: &preds,
                gt: &g,
            }],
            MatchMode::default(),
            serde_json::json!({"k": 1}),
        )
        .unwrap();
        assert_eq!(
            r.to_csv().unwrap(),
            "image_id,tp,fp,fn,pred_count,gt_count\n\"im,1\",1,0,1,1,2\n"
        );
        assert_eq!(r.aggregate.count_mae, 1.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains(r#""match_mode":{"mode":"iou_at","threshold":0.5}"#));
    }

    #[test]
    fn soft_f1_hand_example() {
        // y = [1, 0], p = [0.5, 0.5], padded to a 2x2 grid with zero cells.
        let p = GridPrediction::from_scores(2, 1, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let y = GridPrediction::from_scores(2, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let r = soft_f1_loss(&p, &y).unwrap();
        assert!((r.loss - 0.5).abs() < 1e-6);
    }

    #[test]
    fn soft_f1_extremes() {
        let t = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let y = GridPrediction::from_scores(3, 1, t.clone()).unwrap();
        let perfect = soft_f1_loss(&y, &y).unwrap();
        assert!(perfect.loss <= 1e-6);
        let inv = GridPrediction::from_scores(3, 1, t.iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(soft_f1_loss(&inv, &y).unwrap().loss >= 1.0 - 1e-6);
    }

    #[test]
    fn soft_f1_rejects_bad_inputs() {
        let y = GridPrediction::from_scores(2, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let bad = GridPrediction {
            grid_n: 2,
            num_classes: 1,
            scores: vec![1.2, 0.0, 0.0, 0.0],
        };
        assert!(soft_f1_loss(&bad, &y).is_err());
        let soft_target = GridPrediction::from_scores(2, 1, vec![0.5, 0.0, 0.0, 0.0]).unwrap();
        assert!(soft_f1_loss(&y, &soft_target).is_err());
        let other = GridPrediction::zeros(3, 1);
        assert!(soft_f1_loss(&other, &y).is_err());
    }
}
