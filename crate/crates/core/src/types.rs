//! Domain types: the universal mask-proposal representation, dataset
//! descriptors, and ground-truth segments.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rle::RleMask;

/// The universal representation: N mask-logit planes with one class-logit
/// vector each. Class vectors have one entry per category in the active
/// vocabulary plus a trailing background entry. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ProposalSet {
    height: usize,
    width: usize,
    mask_logits: Vec<Array2<f64>>,
    class_logits: Vec<Array1<f64>>,
}

impl ProposalSet {
    pub fn new(mask_logits: Vec<Array2<f64>>, class_logits: Vec<Array1<f64>>) -> Result<Self> {
        if mask_logits.len() != class_logits.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} class vectors", mask_logits.len()),
                got: format!("{}", class_logits.len()),
            });
        }
        if mask_logits.is_empty() {
            return Err(Error::ShapeMismatch {
                expected: "at least one proposal".into(),
                got: "0".into(),
            });
        }
        let (height, width) = mask_logits[0].dim();
        let class_len = class_logits[0].len();
        for (j, plane) in mask_logits.iter().enumerate() {
            if plane.dim() != (height, width) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{height}x{width}"),
                    got: format!("{}x{} (proposal {j})", plane.dim().0, plane.dim().1),
                });
            }
            if plane.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("mask logits of proposal {j}")));
            }
        }
        if class_len < 2 {
            return Err(Error::ShapeMismatch {
                expected: "class vector of length >= 2 (vocabulary + background)".into(),
                got: format!("{class_len}"),
            });
        }
        for (j, vec) in class_logits.iter().enumerate() {
            if vec.len() != class_len {
                return Err(Error::ShapeMismatch {
                    expected: format!("class vector length {class_len}"),
                    got: format!("{} (proposal {j})", vec.len()),
                });
            }
            if vec.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("class logits of proposal {j}")));
            }
        }
        Ok(Self {
            height,
            width,
            mask_logits,
            class_logits,
        })
    }

    pub fn n(&self) -> usize {
        self.mask_logits.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Vocabulary size excluding the background entry.
    pub fn num_categories(&self) -> usize {
        self.class_logits[0].len() - 1
    }

    pub fn mask_logits(&self, j: usize) -> &Array2<f64> {
        &self.mask_logits[j]
    }

    pub fn class_logits(&self, j: usize) -> &Array1<f64> {
        &self.class_logits[j]
    }

    /// Index of the largest class logit (background is the last index).
    /// Ties resolve to the lowest index.
    pub fn argmax_class(&self, j: usize) -> usize {
        argmax(&self.class_logits[j])
    }

    /// True when the argmax of proposal `j` is the background entry.
    pub fn is_background(&self, j: usize) -> bool {
        self.argmax_class(j) == self.class_logits[j].len() - 1
    }
}

/// First index of the maximum entry.
pub(crate) fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Panoptic,
    Semantic,
    InstanceBox,
    InstanceMask,
}

impl Task {
    pub fn is_instance(self) -> bool {
        matches!(self, Task::InstanceBox | Task::InstanceMask)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Panoptic => "panoptic",
            Task::Semantic => "semantic",
            Task::InstanceBox => "instance_box",
            Task::InstanceMask => "instance_mask",
        }
    }
}

/// Per-term weights for the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ce: f64,
    pub focal: f64,
    pub dice: f64,
    pub proj: f64,
}

/// Per-term weights for the matching cost. Kept fully decoupled from the
/// loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub ce: f64,
    pub focal: f64,
    pub dice: f64,
    pub proj: f64,
}

fn default_lr_multiplier() -> f64 {
    1.0
}

fn default_focal_gamma() -> f64 {
    2.0
}

fn default_focal_alpha() -> f64 {
    0.25
}

fn default_background_weight() -> f64 {
    0.05
}

fn default_gt_stride() -> usize {
    1
}

/// A dataset descriptor: its category vocabulary split into thing and stuff
/// sets, the task it supervises, and its loss/cost/sampling weights.
///
/// The active vocabulary order is the declared order: thing categories first,
/// then stuff categories. Class-logit indices are defined by that order, with
/// background as the extra trailing entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub thing_categories: Vec<u32>,
    pub stuff_categories: Vec<u32>,
    /// Category id -> category name, for resolving classifier embeddings.
    pub category_names: BTreeMap<u32, String>,
    pub task: Task,
    pub loss_weights: LossWeights,
    pub cost_weights: CostWeights,
    pub sampling_weight: f64,
    #[serde(default = "default_lr_multiplier")]
    pub lr_multiplier: f64,
    #[serde(default = "default_focal_gamma")]
    pub focal_gamma: f64,
    #[serde(default = "default_focal_alpha")]
    pub focal_alpha: f64,
    #[serde(default = "default_background_weight")]
    pub background_weight: f64,
    /// Ground-truth downsampling stride for mask losses (1 = full resolution).
    #[serde(default = "default_gt_stride")]
    pub gt_stride: usize,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidSpec {
            name: self.name.clone(),
            reason,
        };
        for id in &self.thing_categories {
            if self.stuff_categories.contains(id) {
                return Err(fail(format!("category {id} is both thing and stuff")));
            }
        }
        if self.task.is_instance() && !self.stuff_categories.is_empty() {
            return Err(fail("instance tasks admit no stuff categories".into()));
        }
        if self.task == Task::Semantic
            && (self.loss_weights.proj != 0.0 || self.cost_weights.proj != 0.0)
        {
            return Err(fail("semantic supervision has no boxes: proj weights must be 0".into()));
        }
        let non_neg = [
            self.loss_weights.ce,
            self.loss_weights.focal,
            self.loss_weights.dice,
            self.loss_weights.proj,
            self.cost_weights.ce,
            self.cost_weights.focal,
            self.cost_weights.dice,
            self.cost_weights.proj,
            self.sampling_weight,
        ];
        if non_neg.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(fail("weights must be nonnegative and finite".into()));
        }
        if !(self.lr_multiplier.is_finite() && self.lr_multiplier > 0.0) {
            return Err(fail("lr_multiplier must be positive".into()));
        }
        if self.gt_stride == 0 {
            return Err(fail("gt_stride must be >= 1".into()));
        }
        for id in self.thing_categories.iter().chain(&self.stuff_categories) {
            if !self.category_names.contains_key(id) {
                return Err(fail(format!("category {id} has no name")));
            }
        }
        Ok(())
    }

    /// Active vocabulary: things in declared order, then stuff.
    pub fn vocabulary(&self) -> Vec<u32> {
        let mut v = self.thing_categories.clone();
        v.extend_from_slice(&self.stuff_categories);
        v
    }

    /// Number of real categories (class vectors carry one more background entry).
    pub fn num_categories(&self) -> usize {
        self.thing_categories.len() + self.stuff_categories.len()
    }

    /// Position of a category id in the class-logit vector.
    pub fn vocab_index(&self, category_id: u32) -> Option<usize> {
        self.thing_categories
            .iter()
            .chain(&self.stuff_categories)
            .position(|&id| id == category_id)
    }

    pub fn is_thing(&self, category_id: u32) -> bool {
        self.thing_categories.contains(&category_id)
    }

    pub fn name_of(&self, category_id: u32) -> Result<&str> {
        self.category_names
            .get(&category_id)
            .map(String::as_str)
            .ok_or_else(|| Error::MissingCategory(format!("id {category_id}")))
    }

    /// Vocabulary as category names, in class-logit order.
    pub fn vocabulary_names(&self) -> Result<Vec<&str>> {
        self.vocabulary()
            .iter()
            .map(|&id| self.name_of(id))
            .collect()
    }
}

/// Axis-aligned pixel rectangle, half-open: x in [x0, x1), y in [y0, y1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoxRect {
    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, other: &BoxRect) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    /// Tight bounding rectangle of a binary mask, or None for an empty mask.
    pub fn of_mask(mask: &Array2<u8>) -> Option<BoxRect> {
        let (h, w) = mask.dim();
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0usize, 0usize);
        let mut any = false;
        for row in 0..h {
            for col in 0..w {
                if mask[(row, col)] != 0 {
                    any = true;
                    x0 = x0.min(col);
                    y0 = y0.min(row);
                    x1 = x1.max(col + 1);
                    y1 = y1.max(row + 1);
                }
            }
        }
        any.then_some(BoxRect { x0, y0, x1, y1 })
    }
}

/// A ground-truth segment: a binary mask (RLE), a box, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentGt {
    pub category_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleMask>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoxRect>,
    #[serde(default)]
    pub ignore: bool,
}

impl SegmentGt {
    /// Check the invariants against the owning image dimensions.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.mask.is_none() && self.bbox.is_none() {
            return Err(Error::Validation(vec![format!(
                "segment (category {}) has neither mask nor box",
                self.category_id
            )]));
        }
        if let Some(rle) = &self.mask {
            if rle.height != height || rle.width != width {
                return Err(Error::ShapeMismatch {
                    expected: format!("{height}x{width}"),
                    got: format!("{}x{}", rle.height, rle.width),
                });
            }
            rle.validate()?;
            if let Some(bbox) = &self.bbox {
                let decoded = rle.decode()?;
                if let Some(tight) = BoxRect::of_mask(&decoded) {
                    if !bbox.contains(&tight) {
                        return Err(Error::Validation(vec![format!(
                            "segment (category {}) box does not contain its mask",
                            self.category_id
                        )]));
                    }
                }
            }
        }
        if let Some(bbox) = &self.bbox {
            if bbox.is_empty() {
                return Err(Error::EmptyBox);
            }
            if bbox.x1 > width || bbox.y1 > height {
                return Err(Error::BoxOutOfBounds {
                    x0: bbox.x0,
                    y0: bbox.y0,
                    x1: bbox.x1,
                    y1: bbox.y1,
                    height,
                    width,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rle::rle_encode;
    use ndarray::array;

    fn toy_spec(task: Task) -> DatasetSpec {
        let mut names = BTreeMap::new();
        names.insert(1, "circle".to_string());
        names.insert(2, "square".to_string());
        names.insert(4, "stripe-stuff".to_string());
        DatasetSpec {
            name: "toy".into(),
            thing_categories: vec![1, 2],
            stuff_categories: if task.is_instance() { vec![] } else { vec![4] },
            category_names: names,
            task,
            loss_weights: LossWeights { ce: 1.0, focal: 20.0, dice: 5.0, proj: 0.0 },
            cost_weights: CostWeights { ce: 1.0, focal: 0.0, dice: 1.0, proj: 0.0 },
            sampling_weight: 1.0,
            lr_multiplier: 1.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            background_weight: 0.05,
            gt_stride: 1,
        }
    }

    #[test]
    fn vocabulary_order_is_declared_order() {
        let spec = toy_spec(Task::Panoptic);
        assert_eq!(spec.vocabulary(), vec![1, 2, 4]);
        assert_eq!(spec.vocab_index(4), Some(2));
        assert_eq!(spec.vocab_index(9), None);
        assert_eq!(spec.vocabulary_names().unwrap(), vec!["circle", "square", "stripe-stuff"]);
    }

    #[test]
    fn spec_invariants_enforced() {
        let mut spec = toy_spec(Task::Panoptic);
        spec.stuff_categories.push(1);
        assert!(spec.validate().is_err());

        let mut spec = toy_spec(Task::InstanceBox);
        spec.stuff_categories = vec![4];
        assert!(spec.validate().is_err());

        let mut spec = toy_spec(Task::Semantic);
        spec.loss_weights.proj = 1.0;
        assert!(spec.validate().is_err());

        assert!(toy_spec(Task::Panoptic).validate().is_ok());
    }

    #[test]
    fn proposal_set_checks_shapes_and_finiteness() {
        let masks = vec![Array2::zeros((2, 3)), Array2::zeros((2, 3))];
        let classes = vec![Array1::zeros(3), Array1::zeros(3)];
        let ps = ProposalSet::new(masks.clone(), classes.clone()).unwrap();
        assert_eq!(ps.n(), 2);
        assert_eq!((ps.height(), ps.width()), (2, 3));
        assert_eq!(ps.num_categories(), 2);

        let bad = vec![Array2::zeros((2, 3)), Array2::zeros((3, 2))];
        assert!(ProposalSet::new(bad, classes.clone()).is_err());

        let mut nan_mask = masks.clone();
        nan_mask[0][(0, 0)] = f64::NAN;
        assert!(ProposalSet::new(nan_mask, classes).is_err());
    }

    #[test]
    fn argmax_prefers_first_on_ties_and_detects_background() {
        let masks = vec![Array2::zeros((1, 1))];
        let classes = vec![array![2.0, 2.0, 1.0]];
        let ps = ProposalSet::new(masks, classes).unwrap();
        assert_eq!(ps.argmax_class(0), 0);
        assert!(!ps.is_background(0));

        let masks = vec![Array2::zeros((1, 1))];
        let classes = vec![array![0.0, 0.0, 3.0]];
        let ps = ProposalSet::new(masks, classes).unwrap();
        assert!(ps.is_background(0));
    }

    #[test]
    fn segment_gt_validation() {
        let mask = array![[0u8, 1], [0, 1]];
        let gt = SegmentGt {
            category_id: 1,
            mask: Some(rle_encode(&mask)),
            bbox: Some(BoxRect { x0: 1, y0: 0, x1: 2, y1: 2 }),
            ignore: false,
        };
        gt.validate(2, 2).unwrap();

        // Box that fails to contain the mask's bounding rect.
        let bad = SegmentGt {
            bbox: Some(BoxRect { x0: 0, y0: 0, x1: 1, y1: 2 }),
            ..gt.clone()
        };
        assert!(bad.validate(2, 2).is_err());

        let neither = SegmentGt {
            category_id: 1,
            mask: None,
            bbox: None,
            ignore: false,
        };
        assert!(neither.validate(2, 2).is_err());
    }
}
