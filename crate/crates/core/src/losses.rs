//! Training losses with analytic gradients w.r.t. mask logits and class
//! logits: dice, focal binary cross-entropy, weighted cross-entropy over
//! classes, the box-projection loss for weak supervision, and the per-dataset
//! weighted total.

use ndarray::{s, Array1, Array2};

use crate::error::{Error, Result};
use crate::merge::{merge_backward, EntryGrad, MergedOutput, ProposalGrads};
use crate::types::{BoxRect, DatasetSpec, ProposalSet, SegmentGt};

/// Smoothing added to the dice numerator and denominator.
pub const DICE_SMOOTHING: f64 = 1e-6;

/// A scalar loss with optional analytic gradients.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad_mask: Option<Array2<f64>>,
    pub grad_class: Option<Array1<f64>>,
}

/// Classification target: a position in the class-logit vector, or the
/// trailing background entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassTarget {
    /// Index into the vocabulary part of the logits (0..len-1).
    Category(usize),
    Background,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_shapes(mask_logits: &Array2<f64>, gt_mask: &Array2<u8>) -> Result<()> {
    if mask_logits.dim() != gt_mask.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", mask_logits.dim().0, mask_logits.dim().1),
            got: format!("{}x{}", gt_mask.dim().0, gt_mask.dim().1),
        });
    }
    Ok(())
}

/// Dice loss on a probability vector against a binary target, with the value
/// and d(value)/d(prob). Shared by the 2-D mask loss and the 1-D projections.
fn dice_on_probs(probs: &[f64], gt: &[u8]) -> (f64, Vec<f64>) {
    let s = DICE_SMOOTHING;
    let mut intersection = 0.0;
    let mut union = 0.0;
    for (&p, &g) in probs.iter().zip(gt) {
        intersection += p * f64::from(g);
        union += p + f64::from(g);
    }
    let value = 1.0 - (2.0 * intersection + s) / (union + s);
    let denom = (union + s) * (union + s);
    let grad = probs
        .iter()
        .zip(gt)
        .map(|(_, &g)| -(2.0 * f64::from(g) * (union + s) - (2.0 * intersection + s)) / denom)
        .collect();
    (value, grad)
}

/// Dice loss between a post-sigmoid mask and a binary ground-truth mask.
pub fn dice_loss(mask_logits: &Array2<f64>, gt_mask: &Array2<u8>) -> Result<LossValue> {
    check_shapes(mask_logits, gt_mask)?;
    let probs: Vec<f64> = mask_logits.iter().map(|&x| sigmoid(x)).collect();
    let gt: Vec<u8> = gt_mask.iter().copied().collect();
    let (value, dprob) = dice_on_probs(&probs, &gt);
    let mut grad = Array2::zeros(mask_logits.dim());
    for ((g, &dp), &p) in grad.iter_mut().zip(&dprob).zip(&probs) {
        *g = dp * p * (1.0 - p);
    }
    Ok(LossValue {
        value,
        grad_mask: Some(grad),
        grad_class: None,
    })
}

/// Focal binary cross-entropy, mean-reduced over pixels:
/// -alpha_t (1 - p_t)^gamma log(p_t).
pub fn focal_bce_loss(
    mask_logits: &Array2<f64>,
    gt_mask: &Array2<u8>,
    gamma: f64,
    alpha: f64,
) -> Result<LossValue> {
    check_shapes(mask_logits, gt_mask)?;
    let n = mask_logits.len() as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(mask_logits.dim());
    for ((&x, &g), out) in mask_logits.iter().zip(gt_mask.iter()).zip(grad.iter_mut()) {
        let positive = g != 0;
        let x_t = if positive { x } else { -x };
        let u = sigmoid(x_t); // p_t
        let v = sigmoid(-x_t); // 1 - p_t
        let sp = softplus(-x_t); // -log p_t
        let alpha_t = if positive { alpha } else { 1.0 - alpha };
        value += alpha_t * v.powf(gamma) * sp;
        // d/dx_t of alpha_t v^gamma sp
        let d = -alpha_t * (gamma * u * sp * v.powf(gamma) + v.powf(gamma + 1.0));
        *out = d * if positive { 1.0 } else { -1.0 } / n;
    }
    Ok(LossValue {
        value: value / n,
        grad_mask: Some(grad),
        grad_class: None,
    })
}

/// Weighted cross-entropy over class logits. The background target is the
/// trailing entry and is down-weighted by `background_weight`.
pub fn ce_class_loss(
    class_logits: &Array1<f64>,
    target: ClassTarget,
    background_weight: f64,
) -> Result<LossValue> {
    let len = class_logits.len();
    let (target_idx, weight) = match target {
        ClassTarget::Category(idx) => {
            if idx >= len - 1 {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    len: len - 1,
                });
            }
            (idx, 1.0)
        }
        ClassTarget::Background => (len - 1, background_weight),
    };
    let max = class_logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max
        + class_logits
            .iter()
            .map(|&z| (z - max).exp())
            .sum::<f64>()
            .ln();
    let value = weight * (lse - class_logits[target_idx]);
    let mut grad = class_logits.mapv(|z| weight * (z - lse).exp());
    grad[target_idx] -= weight;
    Ok(LossValue {
        value,
        grad_mask: None,
        grad_class: Some(grad),
    })
}

/// Box-projection loss: 1-D dice between the axis-wise max of the
/// post-sigmoid mask and the box's indicator, summed over both axes.
/// Gradients route through the axis max (first index on ties).
pub fn projection_loss(mask_logits: &Array2<f64>, bbox: &BoxRect) -> Result<LossValue> {
    let (h, w) = mask_logits.dim();
    if bbox.is_empty() {
        return Err(Error::EmptyBox);
    }
    if bbox.x1 > w || bbox.y1 > h {
        return Err(Error::BoxOutOfBounds {
            x0: bbox.x0,
            y0: bbox.y0,
            x1: bbox.x1,
            y1: bbox.y1,
            height: h,
            width: w,
        });
    }

    // Column projection: per-column max over rows (argmax on logits; sigmoid
    // is monotone).
    let mut col_max_row = vec![0usize; w];
    let mut col_probs = vec![0.0; w];
    for col in 0..w {
        let mut best = 0usize;
        for row in 1..h {
            if mask_logits[(row, col)] > mask_logits[(best, col)] {
                best = row;
            }
        }
        col_max_row[col] = best;
        col_probs[col] = sigmoid(mask_logits[(best, col)]);
    }
    let mut row_max_col = vec![0usize; h];
    let mut row_probs = vec![0.0; h];
    for row in 0..h {
        let mut best = 0usize;
        for col in 1..w {
            if mask_logits[(row, col)] > mask_logits[(row, best)] {
                best = col;
            }
        }
        row_max_col[row] = best;
        row_probs[row] = sigmoid(mask_logits[(row, best)]);
    }

    let box_cols: Vec<u8> = (0..w)
        .map(|q| u8::from(q >= bbox.x0 && q < bbox.x1))
        .collect();
    let box_rows: Vec<u8> = (0..h)
        .map(|p| u8::from(p >= bbox.y0 && p < bbox.y1))
        .collect();

    let (vx, dvx) = dice_on_probs(&col_probs, &box_cols);
    let (vy, dvy) = dice_on_probs(&row_probs, &box_rows);

    let mut grad = Array2::zeros((h, w));
    for col in 0..w {
        let row = col_max_row[col];
        let p = col_probs[col];
        grad[(row, col)] += dvx[col] * p * (1.0 - p);
    }
    for row in 0..h {
        let col = row_max_col[row];
        let p = row_probs[row];
        grad[(row, col)] += dvy[row] * p * (1.0 - p);
    }

    Ok(LossValue {
        value: vx + vy,
        grad_mask: Some(grad),
        grad_class: None,
    })
}

/// Total per-image training loss and its gradients over the proposal set.
#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub value: f64,
    pub grads: ProposalGrads,
}

/// Downsample an array by a stride (top-left anchored).
fn stride_view_f64(a: &Array2<f64>, stride: usize) -> Array2<f64> {
    a.slice(s![..;stride, ..;stride]).to_owned()
}

fn stride_view_u8(a: &Array2<u8>, stride: usize) -> Array2<u8> {
    a.slice(s![..;stride, ..;stride]).to_owned()
}

/// Scatter a strided gradient back onto the full grid.
fn scatter_strided(full: &mut Array2<f64>, strided: &Array2<f64>, stride: usize) {
    for ((r, c), &v) in strided.indexed_iter() {
        full[(r * stride, c * stride)] += v;
    }
}

fn scale_box(bbox: &BoxRect, stride: usize) -> BoxRect {
    BoxRect {
        x0: bbox.x0 / stride,
        y0: bbox.y0 / stride,
        x1: bbox.x1.div_ceil(stride),
        y1: bbox.y1.div_ceil(stride),
    }
}

/// Weighted sum of the component losses over the matched pairs, plus the
/// background cross-entropy on unmatched prediction entries (and, for tasks
/// where background-argmax proposals form no entry, directly on those
/// proposals). Mask terms apply only where the supervision provides them:
/// mask ground truth drives focal+dice, box ground truth drives the
/// projection term. Gradients are accumulated onto the full proposal set
/// through the merge subgradient.
pub fn total_loss(
    proposals: &ProposalSet,
    merged: &MergedOutput,
    pairs: &[(usize, usize)],
    unmatched_entries: &[usize],
    gts: &[SegmentGt],
    spec: &DatasetSpec,
) -> Result<TotalLoss> {
    let lw = &spec.loss_weights;
    let stride = spec.gt_stride.max(1);
    let mut value = 0.0;
    let mut entry_grads: Vec<EntryGrad> = vec![EntryGrad::default(); merged.entries.len()];

    let add_mask_grad = |grads: &mut EntryGrad, g: Array2<f64>, weight: f64| {
        match &mut grads.mask {
            Some(acc) => acc.scaled_add(weight, &g),
            None => {
                let mut acc = Array2::zeros((merged.height, merged.width));
                acc.scaled_add(weight, &g);
                grads.mask = Some(acc);
            }
        }
    };

    for &(entry_idx, gt_idx) in pairs {
        let entry = merged
            .entries
            .get(entry_idx)
            .ok_or(Error::IndexOutOfRange {
                index: entry_idx,
                len: merged.entries.len(),
            })?;
        let gt = gts.get(gt_idx).ok_or(Error::IndexOutOfRange {
            index: gt_idx,
            len: gts.len(),
        })?;

        if lw.ce > 0.0 {
            let target_idx = spec.vocab_index(gt.category_id).ok_or_else(|| {
                Error::MissingCategory(format!("id {}", gt.category_id))
            })?;
            let ce = ce_class_loss(
                &entry.class_logits,
                ClassTarget::Category(target_idx),
                spec.background_weight,
            )?;
            value += lw.ce * ce.value;
            let g = ce.grad_class.expect("ce gradient");
            match &mut entry_grads[entry_idx].class {
                Some(acc) => acc.scaled_add(lw.ce, &g),
                None => entry_grads[entry_idx].class = Some(lw.ce * g),
            }
        }

        if lw.focal > 0.0 || lw.dice > 0.0 {
            let rle = gt.mask.as_ref().ok_or(Error::MissingSupervision {
                field: "mask",
                weight: "focal/dice loss",
            })?;
            let gt_mask = stride_view_u8(&rle.decode()?, stride);
            let pred = stride_view_f64(&entry.mask_logits, stride);
            if lw.focal > 0.0 {
                let focal = focal_bce_loss(&pred, &gt_mask, spec.focal_gamma, spec.focal_alpha)?;
                value += lw.focal * focal.value;
                let mut g = Array2::zeros((merged.height, merged.width));
                scatter_strided(&mut g, &focal.grad_mask.expect("focal gradient"), stride);
                add_mask_grad(&mut entry_grads[entry_idx], g, lw.focal);
            }
            if lw.dice > 0.0 {
                let dice = dice_loss(&pred, &gt_mask)?;
                value += lw.dice * dice.value;
                let mut g = Array2::zeros((merged.height, merged.width));
                scatter_strided(&mut g, &dice.grad_mask.expect("dice gradient"), stride);
                add_mask_grad(&mut entry_grads[entry_idx], g, lw.dice);
            }
        }

        if lw.proj > 0.0 {
            let bbox = gt.bbox.as_ref().ok_or(Error::MissingSupervision {
                field: "box",
                weight: "projection loss",
            })?;
            if stride == 1 {
                let proj = projection_loss(&entry.mask_logits, bbox)?;
                value += lw.proj * proj.value;
                add_mask_grad(
                    &mut entry_grads[entry_idx],
                    proj.grad_mask.expect("projection gradient"),
                    lw.proj,
                );
            } else {
                let pred = stride_view_f64(&entry.mask_logits, stride);
                let proj = projection_loss(&pred, &scale_box(bbox, stride))?;
                value += lw.proj * proj.value;
                let mut g = Array2::zeros((merged.height, merged.width));
                scatter_strided(&mut g, &proj.grad_mask.expect("projection gradient"), stride);
                add_mask_grad(&mut entry_grads[entry_idx], g, lw.proj);
            }
        }
    }

    if lw.ce > 0.0 {
        for &entry_idx in unmatched_entries {
            let entry = merged
                .entries
                .get(entry_idx)
                .ok_or(Error::IndexOutOfRange {
                    index: entry_idx,
                    len: merged.entries.len(),
                })?;
            let ce = ce_class_loss(
                &entry.class_logits,
                ClassTarget::Background,
                spec.background_weight,
            )?;
            value += lw.ce * ce.value;
            let g = ce.grad_class.expect("ce gradient");
            match &mut entry_grads[entry_idx].class {
                Some(acc) => acc.scaled_add(lw.ce, &g),
                None => entry_grads[entry_idx].class = Some(lw.ce * g),
            }
        }
    }

    let mut grads = merge_backward(merged, &entry_grads, proposals)?;

    // Proposals that appear in no entry (background-argmax proposals under
    // semantic merging) receive the background cross-entropy directly.
    if lw.ce > 0.0 {
        let mut covered = vec![false; proposals.n()];
        for entry in &merged.entries {
            for &j in &entry.members {
                covered[j] = true;
            }
        }
        for j in 0..proposals.n() {
            if covered[j] {
                continue;
            }
            let ce = ce_class_loss(
                proposals.class_logits(j),
                ClassTarget::Background,
                spec.background_weight,
            )?;
            value += lw.ce * ce.value;
            grads.class[j].scaled_add(lw.ce, &ce.grad_class.expect("ce gradient"));
        }
    }

    Ok(TotalLoss { value, grads })
}
