//! Training objectives and evaluation metrics for binary masks.
//!
//! Losses exist in two forms: tape-level (`*_var`, differentiable, used by the
//! training loops) and plain value-level wrappers that run the same graph on a
//! scratch tape. The balanced BCE scales the mean BCE by the eps-regularized
//! positive-pixel fraction zeta; the conventional two-coefficient balancing is
//! available behind `per_term_balanced` and is off by default.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clamp applied to predictions before logs.
pub const EPS_CLIP: f64 = 1e-7;
/// Default epsilon in the zeta balancing factor.
pub const ZETA_EPS: f64 = 1e-6;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MaskKind {
    Prediction,
    GroundTruth,
}

/// A segmentation mask: continuous probabilities for predictions, exact {0, 1}
/// values for ground truth.
#[derive(Clone, Debug)]
pub struct Mask {
    values: Tensor,
    kind: MaskKind,
}

impl Mask {
    pub fn prediction(values: Tensor) -> Result<Self> {
        if values.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::contract("prediction values must lie in [0, 1]"));
        }
        Ok(Mask {
            values,
            kind: MaskKind::Prediction,
        })
    }

    pub fn ground_truth(values: Tensor) -> Result<Self> {
        if values.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::contract("ground truth values must be exactly 0 or 1"));
        }
        Ok(Mask {
            values,
            kind: MaskKind::GroundTruth,
        })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }
}

fn check_same_shape(tape: &Tape, pred: Var, gt: Var) -> Result<()> {
    let (sp, sg) = (tape.shape_of(pred), tape.shape_of(gt));
    if sp != sg {
        return Err(Error::shape(format!("pred {sp:?} vs gt {sg:?}")));
    }
    Ok(())
}

/// Mean binary cross-entropy over pixels, with the prediction clamped to
/// [EPS_CLIP, 1 - EPS_CLIP].
pub fn bce_var(tape: &Tape, pred: Var, gt: Var) -> Result<Var> {
    check_same_shape(tape, pred, gt)?;
    let p = tape.clamp(pred, EPS_CLIP, 1.0 - EPS_CLIP)?;
    let ln_p = tape.ln(p)?;
    let one_minus_p = tape.add_scalar(tape.neg(p)?, 1.0)?;
    let ln_q = tape.ln(one_minus_p)?;
    let one_minus_gt = tape.add_scalar(tape.neg(gt)?, 1.0)?;
    let pos = tape.mul(gt, ln_p)?;
    let neg = tape.mul(one_minus_gt, ln_q)?;
    let total = tape.add(pos, neg)?;
    tape.neg(tape.mean(total)?)
}

/// The zeta factor: (sum(m) + eps) / (sum(m) + sum(1 - m) + eps).
pub fn zeta_var(tape: &Tape, gt: Var, eps: f64) -> Result<Var> {
    let s_pos = tape.sum(gt)?;
    let one_minus_gt = tape.add_scalar(tape.neg(gt)?, 1.0)?;
    let s_neg = tape.sum(one_minus_gt)?;
    let num = tape.add_scalar(s_pos, eps)?;
    let denom = tape.add_scalar(tape.add(s_pos, s_neg)?, eps)?;
    tape.div(num, denom)
}

/// Balanced BCE: zeta times the mean BCE. With `per_term_balanced`, the
/// conventional class-weighted form is used instead (positives weighted by the
/// negative fraction and vice versa).
pub fn bbce_var(tape: &Tape, pred: Var, gt: Var, eps: f64, per_term_balanced: bool) -> Result<Var> {
    check_same_shape(tape, pred, gt)?;
    let gt_sum: f64 = tape.value(gt).data().iter().sum();
    if gt_sum == 0.0 {
        log::warn!("bbce: ground truth has no positive pixels; zeta ~ 0 makes the loss vanish");
    }
    if !per_term_balanced {
        let zeta = zeta_var(tape, gt, eps)?;
        let bce = bce_var(tape, pred, gt)?;
        return tape.mul(zeta, bce);
    }
    let p = tape.clamp(pred, EPS_CLIP, 1.0 - EPS_CLIP)?;
    let ln_p = tape.ln(p)?;
    let one_minus_p = tape.add_scalar(tape.neg(p)?, 1.0)?;
    let ln_q = tape.ln(one_minus_p)?;
    let one_minus_gt = tape.add_scalar(tape.neg(gt)?, 1.0)?;
    // positive term weighted by the negative-pixel fraction, and vice versa
    let s_pos = tape.sum(gt)?;
    let s_neg = tape.sum(one_minus_gt)?;
    let n = tape.add_scalar(tape.add(s_pos, s_neg)?, eps)?;
    let w_pos = tape.div(tape.add_scalar(s_neg, eps)?, n)?;
    let w_neg = tape.div(tape.add_scalar(s_pos, eps)?, n)?;
    let pos = tape.mean(tape.mul(gt, ln_p)?)?;
    let neg = tape.mean(tape.mul(one_minus_gt, ln_q)?)?;
    let weighted = tape.add(tape.mul(w_pos, pos)?, tape.mul(w_neg, neg)?)?;
    tape.neg(weighted)
}

/// Soft IoU complement: 1 - sum(p*m) / (sum(p + m) - sum(p*m)).
/// Two all-zero masks count as a perfect (zero-loss) match.
pub fn iou_loss_var(tape: &Tape, pred: Var, gt: Var) -> Result<Var> {
    check_same_shape(tape, pred, gt)?;
    let pred_sum: f64 = tape.value(pred).data().iter().sum();
    let gt_sum: f64 = tape.value(gt).data().iter().sum();
    if pred_sum == 0.0 && gt_sum == 0.0 {
        return Ok(tape.leaf(&Tensor::scalar(0.0)));
    }
    let inter = tape.sum(tape.mul(pred, gt)?)?;
    let total = tape.sum(tape.add(pred, gt)?)?;
    let union = tape.sub(total, inter)?;
    let ratio = tape.div(inter, union)?;
    tape.add_scalar(tape.neg(ratio)?, 1.0)
}

/// The camouflage objective: balanced BCE plus soft IoU.
pub fn combined_cod_loss_var(tape: &Tape, pred: Var, gt: Var) -> Result<Var> {
    let bbce = bbce_var(tape, pred, gt, ZETA_EPS, false)?;
    let iou = iou_loss_var(tape, pred, gt)?;
    tape.add(bbce, iou)
}

fn eval_loss(
    pred: &Mask,
    gt: &Mask,
    f: impl Fn(&Tape, Var, Var) -> Result<Var>,
) -> Result<f64> {
    let tape = Tape::new();
    let p = tape.leaf(pred.values());
    let g = tape.leaf(gt.values());
    tape.value(f(&tape, p, g)?).item()
}

pub fn bce(pred: &Mask, gt: &Mask) -> Result<f64> {
    eval_loss(pred, gt, bce_var)
}

pub fn bbce(pred: &Mask, gt: &Mask, eps: f64) -> Result<f64> {
    eval_loss(pred, gt, |t, p, g| bbce_var(t, p, g, eps, false))
}

pub fn bbce_per_term(pred: &Mask, gt: &Mask, eps: f64) -> Result<f64> {
    eval_loss(pred, gt, |t, p, g| bbce_var(t, p, g, eps, true))
}

pub fn iou_loss(pred: &Mask, gt: &Mask) -> Result<f64> {
    eval_loss(pred, gt, iou_loss_var)
}

pub fn combined_cod_loss(pred: &Mask, gt: &Mask) -> Result<f64> {
    eval_loss(pred, gt, combined_cod_loss_var)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub mae: f64,
    pub ber: f64,
    pub dice: f64,
    pub iou: f64,
    pub f1: f64,
    pub auc: f64,
}

#[derive(Clone, Copy, Default)]
struct Counts {
    tp: u64,
    fp: u64,
    tn: u64,
    fn_: u64,
}

fn count_at(pred: &[f64], gt: &[f64], threshold: f64) -> Counts {
    let mut c = Counts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        let pp = p >= threshold;
        let gp = g != 0.0;
        match (pp, gp) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Ratio with the 0/0 case resolved to `empty` (perfect on an empty class).
fn rate(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// Pixel metrics at a fixed threshold plus the threshold-swept AUC.
pub fn metrics(pred: &Mask, gt: &Mask, threshold: f64) -> Result<MaskMetrics> {
    if pred.values().shape() != gt.values().shape() {
        return Err(Error::shape(format!(
            "pred {:?} vs gt {:?}",
            pred.values().shape(),
            gt.values().shape()
        )));
    }
    if gt.kind() != MaskKind::GroundTruth {
        return Err(Error::contract("metrics requires a binary ground truth"));
    }
    let p = pred.values().data();
    let g = gt.values().data();
    let mae = p
        .iter()
        .zip(g)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / p.len() as f64;
    let c = count_at(p, g, threshold);
    let tpr = rate(c.tp, c.tp + c.fn_, 1.0);
    let tnr = rate(c.tn, c.tn + c.fp, 1.0);
    let ber = 100.0 * (1.0 - 0.5 * (tpr + tnr));
    let dice = if 2 * c.tp + c.fp + c.fn_ == 0 {
        1.0
    } else {
        2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64
    };
    let iou = if c.tp + c.fp + c.fn_ == 0 {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fp + c.fn_) as f64
    };
    Ok(MaskMetrics {
        mae,
        ber,
        dice,
        iou,
        f1: dice,
        auc: auc(pred, gt)?,
    })
}

/// Trapezoidal area under the ROC curve over 256 evenly spaced thresholds
/// (plus the all-negative anchor point).
pub fn auc(pred: &Mask, gt: &Mask) -> Result<f64> {
    if pred.values().shape() != gt.values().shape() {
        return Err(Error::shape("auc shape mismatch"));
    }
    let p = pred.values().data();
    let g = gt.values().data();
    // (fpr, tpr) from the strictest threshold down to 0
    let mut points = vec![(0.0, 0.0)];
    for k in (0..256).rev() {
        let t = k as f64 / 255.0;
        let c = count_at(p, g, t);
        let tpr = rate(c.tp, c.tp + c.fn_, 1.0);
        let fpr = rate(c.fp, c.fp + c.tn, 0.0);
        points.push((fpr, tpr));
    }
    let mut area = 0.0;
    for w in points.windows(2) {
        let (f0, t0) = w[0];
        let (f1, t1) = w[1];
        area += (f1 - f0) * (t0 + t1) * 0.5;
    }
    Ok(area)
}

/// Per-dataset aggregate: the mean of each per-image metric.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub name: String,
    pub n_images: usize,
    pub mae: f64,
    pub ber: f64,
    pub mdice: f64,
    pub miou: f64,
    pub f1: f64,
    pub auc: f64,
}

pub fn aggregate(name: &str, per_image: &[MaskMetrics]) -> DatasetMetrics {
    let n = per_image.len().max(1) as f64;
    let mean = |f: fn(&MaskMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
    DatasetMetrics {
        name: name.to_string(),
        n_images: per_image.len(),
        mae: mean(|m| m.mae),
        ber: mean(|m| m.ber),
        mdice: mean(|m| m.dice),
        miou: mean(|m| m.iou),
        f1: mean(|m| m.f1),
        auc: mean(|m| m.auc),
    }
}

impl DatasetMetrics {
    /// Metric values keyed by report column name, in schema order.
    pub fn named_values(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("mae", self.mae),
            ("ber", self.ber),
            ("mdice", self.mdice),
            ("miou", self.miou),
            ("f1", self.f1),
            ("auc", self.auc),
        ]
    }
}

/// The `report.json` document produced by evaluation runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub datasets: Vec<DatasetMetrics>,
    pub config: serde_json::Value,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub git_describe: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    fn mask_pred(vals: &[f64]) -> Mask {
        Mask::prediction(Tensor::new(vec![vals.len()], vals.to_vec()).unwrap()).unwrap()
    }

    fn mask_gt(vals: &[f64]) -> Mask {
        Mask::ground_truth(Tensor::new(vec![vals.len()], vals.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn mask_validation() {
        assert!(Mask::prediction(Tensor::new(vec![1], vec![1.2]).unwrap()).is_err());
        assert!(Mask::ground_truth(Tensor::new(vec![1], vec![0.5]).unwrap()).is_err());
        assert!(Mask::ground_truth(Tensor::new(vec![2], vec![0.0, 1.0]).unwrap()).is_ok());
    }

    #[test]
    fn bce_values() {
        // perfect binary prediction: clamp-scale loss
        let gt = mask_gt(&[1.0, 0.0, 1.0, 0.0]);
        let perfect = mask_pred(&[1.0, 0.0, 1.0, 0.0]);
        assert!(bce(&perfect, &gt).unwrap() <= 1e-6);
        // pred 0.5 everywhere: ln 2 for any gt
        let half = mask_pred(&[0.5; 4]);
        assert!((bce(&half, &gt).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        // single pixel m = 1, p = 0.25: -ln 0.25
        let one = bce(&mask_pred(&[0.25]), &mask_gt(&[1.0])).unwrap();
        assert!((one - 1.3862943611198906).abs() < 1e-12);
    }

    #[test]
    fn bbce_zeta_cases() {
        // all positive: zeta = 1, bbce = bce
        let gt = mask_gt(&[1.0; 4]);
        let pred = mask_pred(&[0.7, 0.2, 0.9, 0.4]);
        let a = bbce(&pred, &gt, ZETA_EPS).unwrap();
        let b = bce(&pred, &gt).unwrap();
        assert!((a - b).abs() < 1e-9);
        // 3 of 4 positive: zeta = (3 + eps)/(4 + eps)
        let gt34 = mask_gt(&[1.0, 1.0, 1.0, 0.0]);
        let tape = Tape::new();
        let g = tape.leaf(gt34.values());
        let zeta = tape.value(zeta_var(&tape, g, 1e-6).unwrap()).item().unwrap();
        assert!((zeta - 0.75).abs() < 1e-6, "zeta {zeta}");
        // degenerate all-negative gt: loss collapses toward 0
        let gt0 = mask_gt(&[0.0; 4]);
        let loss = bbce(&pred, &gt0, ZETA_EPS).unwrap();
        assert!(loss.abs() < 1e-5, "loss {loss}");
    }

    #[test]
    fn per_term_mode_differs_on_imbalanced_masks() {
        let gt = mask_gt(&[1.0, 0.0, 0.0, 0.0]);
        let pred = mask_pred(&[0.6, 0.4, 0.3, 0.2]);
        let printed = bbce(&pred, &gt, ZETA_EPS).unwrap();
        let balanced = bbce_per_term(&pred, &gt, ZETA_EPS).unwrap();
        assert!((printed - balanced).abs() > 1e-6);
    }

    #[test]
    fn iou_loss_values() {
        let gt = mask_gt(&[1.0, 1.0, 0.0, 0.0]);
        assert!(iou_loss(&mask_pred(&[1.0, 1.0, 0.0, 0.0]), &gt).unwrap().abs() < 1e-12);
        // disjoint: exactly 1
        let disjoint = iou_loss(&mask_pred(&[0.0, 0.0, 1.0, 1.0]), &gt).unwrap();
        assert_eq!(disjoint, 1.0);
        // 2x2 with two gt-ones and pred 0.5: 1 - 1/3
        let l = iou_loss(&mask_pred(&[0.5; 4]), &gt).unwrap();
        assert!((l - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        // both empty: perfect by convention
        let zero = iou_loss(&mask_pred(&[0.0; 4]), &mask_gt(&[0.0; 4])).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn combined_loss() {
        let gt = mask_gt(&[1.0, 0.0, 1.0, 1.0]);
        let pred = mask_pred(&[1.0, 0.0, 1.0, 1.0]);
        assert!(combined_cod_loss(&pred, &gt).unwrap() <= 1e-6);
        let some = mask_pred(&[0.7, 0.3, 0.6, 0.9]);
        let combined = combined_cod_loss(&some, &gt).unwrap();
        let parts = bbce(&some, &gt, ZETA_EPS).unwrap() + iou_loss(&some, &gt).unwrap();
        assert_eq!(combined, parts);
    }

    #[test]
    fn combined_loss_grad_check() {
        let mut rng = Prng::new(40);
        let logits = Tensor::from_fn(vec![12], |_| rng.uniform_in(-1.5, 1.5));
        let gt = Tensor::from_fn(vec![12], |_| if rng.uniform() < 0.4 { 1.0 } else { 0.0 });
        let err = crate::autodiff::grad_check(&[logits], 1e-5, |tape, vs| {
            let pred = tape.sigmoid(vs[0])?;
            let g = tape.leaf(&gt);
            combined_cod_loss_var(tape, pred, g)
        })
        .unwrap();
        assert!(err <= 1e-4, "err {err}");
    }

    #[test]
    fn losses_decrease_along_path_to_gt() {
        let mut rng = Prng::new(77);
        let gt_vals: Vec<f64> = (0..64)
            .map(|_| if rng.uniform() < 0.5 { 1.0 } else { 0.0 })
            .collect();
        let start: Vec<f64> = (0..64).map(|_| rng.uniform_in(0.05, 0.95)).collect();
        let gt = mask_gt(&gt_vals);
        let mut prev_bce = f64::INFINITY;
        let mut prev_iou = f64::INFINITY;
        for step in 0..=10 {
            let t = step as f64 / 10.0;
            let vals: Vec<f64> = start
                .iter()
                .zip(&gt_vals)
                .map(|(s, g)| s + t * (g - s))
                .collect();
            let pred = mask_pred(&vals);
            let b = bce(&pred, &gt).unwrap();
            let i = iou_loss(&pred, &gt).unwrap();
            assert!(b <= prev_bce + 1e-12);
            assert!(i <= prev_iou + 1e-12);
            prev_bce = b;
            prev_iou = i;
        }
    }

    #[test]
    fn perfect_and_inverted_metrics() {
        let gt = mask_gt(&[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let m = metrics(&Mask::prediction(gt.values().clone()).unwrap(), &gt, 0.5).unwrap();
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.ber, 0.0);
        assert_eq!(m.dice, 1.0);
        assert_eq!(m.iou, 1.0);
        assert_eq!(m.auc, 1.0);
        let inv_vals: Vec<f64> = gt.values().data().iter().map(|v| 1.0 - v).collect();
        let inv = metrics(&mask_pred(&inv_vals), &gt, 0.5).unwrap();
        assert_eq!(inv.ber, 100.0);
        assert_eq!(inv.dice, 0.0);
        assert_eq!(inv.iou, 0.0);
    }

    #[test]
    fn metrics_match_counting_oracle() {
        // independent oracle: literal definition with per-pixel loops
        let mut rng = Prng::new(123);
        for _ in 0..50 {
            let n = 16 * 16;
            let pred_vals: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let gt_vals: Vec<f64> = (0..n)
                .map(|_| if rng.uniform() < 0.5 { 1.0 } else { 0.0 })
                .collect();
            let m = metrics(&mask_pred(&pred_vals), &mask_gt(&gt_vals), 0.5).unwrap();
            let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
            let mut abs_sum = 0.0;
            for i in 0..n {
                abs_sum += (pred_vals[i] - gt_vals[i]).abs();
                let p = pred_vals[i] >= 0.5;
                let g = gt_vals[i] == 1.0;
                if p && g {
                    tp += 1;
                } else if p {
                    fp += 1;
                } else if g {
                    fn_ += 1;
                } else {
                    tn += 1;
                }
            }
            assert!((m.mae - abs_sum / n as f64).abs() < 1e-15);
            let want_dice = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
            let want_iou = tp as f64 / (tp + fp + fn_) as f64;
            let want_ber = 100.0
                * (1.0
                    - 0.5 * (tp as f64 / (tp + fn_) as f64 + tn as f64 / (tn + fp) as f64));
            assert!((m.dice - want_dice).abs() < 1e-12);
            assert!((m.iou - want_iou).abs() < 1e-12);
            assert!((m.ber - want_ber).abs() < 1e-12);
            assert_eq!(m.f1, m.dice);
            assert!(m.dice >= m.iou);
        }
    }

    #[test]
    fn auc_matches_threshold_sweep_oracle() {
        let mut rng = Prng::new(321);
        let n = 16 * 16;
        let pred_vals: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let gt_vals: Vec<f64> = (0..n)
            .map(|_| if rng.uniform() < 0.3 { 1.0 } else { 0.0 })
            .collect();
        let got = auc(&mask_pred(&pred_vals), &mask_gt(&gt_vals)).unwrap();
        // oracle: recompute the trapezoid from scratch
        let mut pts = vec![(0.0f64, 0.0f64)];
        for k in (0..256).rev() {
            let t = k as f64 / 255.0;
            let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
            for i in 0..n {
                let p = pred_vals[i] >= t;
                let g = gt_vals[i] == 1.0;
                if p && g {
                    tp += 1;
                } else if p {
                    fp += 1;
                } else if g {
                    fn_ += 1;
                } else {
                    tn += 1;
                }
            }
            pts.push((
                fp as f64 / (fp + tn).max(1) as f64,
                tp as f64 / (tp + fn_).max(1) as f64,
            ));
        }
        let mut want = 0.0;
        for w in pts.windows(2) {
            want += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5;
        }
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn aggregation_is_mean_of_per_image() {
        let per = vec![
            MaskMetrics { mae: 0.1, ber: 10.0, dice: 0.8, iou: 0.7, f1: 0.8, auc: 0.9 },
            MaskMetrics { mae: 0.3, ber: 20.0, dice: 0.6, iou: 0.5, f1: 0.6, auc: 0.7 },
        ];
        let agg = aggregate("toy", &per);
        assert_eq!(agg.n_images, 2);
        assert!((agg.mdice - 0.7).abs() < 1e-15);
        assert!((agg.miou - 0.6).abs() < 1e-15);
        assert!((agg.mae - 0.2).abs() < 1e-15);
    }
}
