//! MERGE operations: element-wise max over mask logits and average over class
//! logits across the proposals predicting the same category, plus the
//! task-specific dispatch and the subgradient needed for training.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::types::{DatasetSpec, ProposalSet, Task};

/// Merged mask value for categories nobody predicts; close to 0 after sigmoid.
pub const SENTINEL: f64 = -100.0;

/// Guards the class-logit average against division by zero.
pub const MERGE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    MergedCategory,
    RawProposal,
}

/// One matchable prediction entity: either the merged output for a category
/// or a single untouched proposal.
#[derive(Debug, Clone)]
pub struct MergedEntry {
    pub kind: EntryKind,
    /// Set for merged-category entries.
    pub category_id: Option<u32>,
    pub mask_logits: Array2<f64>,
    pub class_logits: Array1<f64>,
    /// Constituent proposal indices, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MergedOutput {
    pub entries: Vec<MergedEntry>,
    pub height: usize,
    pub width: usize,
}

/// Gradient of some scalar loss with respect to one merged entry.
#[derive(Debug, Clone, Default)]
pub struct EntryGrad {
    pub mask: Option<Array2<f64>>,
    pub class: Option<Array1<f64>>,
}

/// Gradients accumulated over the full proposal set.
#[derive(Debug, Clone)]
pub struct ProposalGrads {
    pub mask: Vec<Array2<f64>>,
    pub class: Vec<Array1<f64>>,
}

impl ProposalGrads {
    pub fn zeros(proposals: &ProposalSet) -> Self {
        Self {
            mask: vec![Array2::zeros((proposals.height(), proposals.width())); proposals.n()],
            class: vec![Array1::zeros(proposals.class_logits(0).len()); proposals.n()],
        }
    }
}

fn category_members(proposals: &ProposalSet, class_index: usize) -> Vec<usize> {
    (0..proposals.n())
        .filter(|&j| proposals.argmax_class(j) == class_index)
        .collect()
}

fn max_over_members(proposals: &ProposalSet, members: &[usize]) -> Array2<f64> {
    let (h, w) = (proposals.height(), proposals.width());
    if members.is_empty() {
        return Array2::from_elem((h, w), SENTINEL);
    }
    let mut out = proposals.mask_logits(members[0]).clone();
    for &j in &members[1..] {
        let plane = proposals.mask_logits(j);
        out.zip_mut_with(plane, |acc, &v| {
            if v > *acc {
                *acc = v;
            }
        });
    }
    out
}

fn mean_over_members(proposals: &ProposalSet, members: &[usize]) -> Option<Array1<f64>> {
    if members.is_empty() {
        return None;
    }
    let mut sum = Array1::zeros(proposals.class_logits(0).len());
    for &j in members {
        sum += proposals.class_logits(j);
    }
    Some(sum / (members.len() as f64 + MERGE_EPSILON))
}

/// Per-pixel max of the mask logits over the proposals whose class argmax is
/// `category_id`; every pixel is [`SENTINEL`] when no proposal predicts it.
pub fn merge_masks(
    proposals: &ProposalSet,
    spec: &DatasetSpec,
    category_id: u32,
) -> Result<Array2<f64>> {
    let idx = spec
        .vocab_index(category_id)
        .ok_or_else(|| Error::MissingCategory(format!("id {category_id}")))?;
    Ok(max_over_members(
        proposals,
        &category_members(proposals, idx),
    ))
}

/// Mean of the class logits over the proposals whose class argmax is
/// `category_id` (sum divided by count + epsilon); None when no proposal
/// predicts it.
pub fn merge_class_logits(
    proposals: &ProposalSet,
    spec: &DatasetSpec,
    category_id: u32,
) -> Result<Option<Array1<f64>>> {
    let idx = spec
        .vocab_index(category_id)
        .ok_or_else(|| Error::MissingCategory(format!("id {category_id}")))?;
    Ok(mean_over_members(
        proposals,
        &category_members(proposals, idx),
    ))
}

/// Task dispatch producing the entities that are matched against ground truth.
///
/// - panoptic: one merged entry per stuff category with at least one
///   predicting proposal; every thing-argmax or background-argmax proposal is
///   carried as a raw entry (background-argmax ones are only eligible for the
///   unmatched/background loss).
/// - semantic: one merged entry per category (thing and stuff) with at least
///   one predicting proposal; background-argmax proposals produce no entry.
/// - instance: one raw entry per proposal.
///
/// Entry order is deterministic: merged entries in vocabulary order, then raw
/// entries in proposal-index order.
pub fn apply_task_merge(proposals: &ProposalSet, spec: &DatasetSpec) -> Result<MergedOutput> {
    let num_classes = spec.num_categories() + 1;
    if proposals.class_logits(0).len() != num_classes {
        return Err(Error::ShapeMismatch {
            expected: format!("class vectors of length {num_classes}"),
            got: format!("{}", proposals.class_logits(0).len()),
        });
    }

    let mut entries = Vec::new();
    let mut push_merged_for = |ids: &[u32]| -> Result<()> {
        for &cat in ids {
            let idx = spec.vocab_index(cat).expect("category from spec vocabulary");
            let members = category_members(proposals, idx);
            if members.is_empty() {
                continue;
            }
            entries.push(MergedEntry {
                kind: EntryKind::MergedCategory,
                category_id: Some(cat),
                mask_logits: max_over_members(proposals, &members),
                class_logits: mean_over_members(proposals, &members)
                    .expect("nonempty member set"),
                members,
            });
        }
        Ok(())
    };

    match spec.task {
        Task::Panoptic => {
            push_merged_for(&spec.stuff_categories)?;
            for j in 0..proposals.n() {
                let argmax = proposals.argmax_class(j);
                let is_bg = argmax == num_classes - 1;
                let is_thing = !is_bg && spec.is_thing(spec.vocabulary()[argmax]);
                if is_bg || is_thing {
                    entries.push(raw_entry(proposals, j));
                }
            }
        }
        Task::Semantic => {
            push_merged_for(&spec.vocabulary())?;
        }
        Task::InstanceBox | Task::InstanceMask => {
            for j in 0..proposals.n() {
                entries.push(raw_entry(proposals, j));
            }
        }
    }

    Ok(MergedOutput {
        entries,
        height: proposals.height(),
        width: proposals.width(),
    })
}

fn raw_entry(proposals: &ProposalSet, j: usize) -> MergedEntry {
    MergedEntry {
        kind: EntryKind::RawProposal,
        category_id: None,
        mask_logits: proposals.mask_logits(j).clone(),
        class_logits: proposals.class_logits(j).clone(),
        members: vec![j],
    }
}

/// Subgradient of the MERGE operations: each pixel's mask gradient routes
/// entirely to the member attaining the max (first member on exact ties);
/// class gradients distribute 1/(count + epsilon) to every member.
pub fn merge_backward(
    merged: &MergedOutput,
    entry_grads: &[EntryGrad],
    proposals: &ProposalSet,
) -> Result<ProposalGrads> {
    if entry_grads.len() != merged.entries.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} entry gradients", merged.entries.len()),
            got: format!("{}", entry_grads.len()),
        });
    }
    let (h, w) = (proposals.height(), proposals.width());
    let mut grads = ProposalGrads::zeros(proposals);

    for (entry, grad) in merged.entries.iter().zip(entry_grads) {
        if let Some(gmask) = &grad.mask {
            if gmask.dim() != (h, w) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{h}x{w}"),
                    got: format!("{}x{}", gmask.dim().0, gmask.dim().1),
                });
            }
            match entry.kind {
                EntryKind::RawProposal => {
                    grads.mask[entry.members[0]] += gmask;
                }
                EntryKind::MergedCategory => {
                    for row in 0..h {
                        for col in 0..w {
                            let g = gmask[(row, col)];
                            if g == 0.0 {
                                continue;
                            }
                            let mut best = entry.members[0];
                            let mut best_val = proposals.mask_logits(best)[(row, col)];
                            for &j in &entry.members[1..] {
                                let v = proposals.mask_logits(j)[(row, col)];
                                if v > best_val {
                                    best = j;
                                    best_val = v;
                                }
                            }
                            grads.mask[best][(row, col)] += g;
                        }
                    }
                }
            }
        }
        if let Some(gclass) = &grad.class {
            if gclass.len() != proposals.class_logits(0).len() {
                return Err(Error::ShapeMismatch {
                    expected: format!("class gradient length {}", proposals.class_logits(0).len()),
                    got: format!("{}", gclass.len()),
                });
            }
            match entry.kind {
                EntryKind::RawProposal => {
                    grads.class[entry.members[0]] += gclass;
                }
                EntryKind::MergedCategory => {
                    let scale = 1.0 / (entry.members.len() as f64 + MERGE_EPSILON);
                    for &j in &entry.members {
                        grads.class[j].scaled_add(scale, gclass);
                    }
                }
            }
        }
    }
    Ok(grads)
}
