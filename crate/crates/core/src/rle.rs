//! Uncompressed run-length encoding for binary masks (COCO convention):
//! column-major pixel order, alternating 0-runs and 1-runs, starting with a
//! (possibly zero-length) background run.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u32>,
}

impl RleMask {
    /// Total pixels covered by the run counts.
    pub fn sum(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    /// Foreground pixel count (sum of the 1-runs).
    pub fn area(&self) -> usize {
        self.counts
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&c| c as usize)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.height * self.width;
        let sum = self.sum();
        if sum != expected {
            return Err(Error::SumMismatch { sum, expected });
        }
        Ok(())
    }

    pub fn decode(&self) -> Result<Array2<u8>> {
        rle_decode(self)
    }
}

/// Encode a binary mask (entries 0/1) as column-major run lengths.
pub fn rle_encode(mask: &Array2<u8>) -> RleMask {
    let (height, width) = mask.dim();
    let mut counts = Vec::new();
    let mut current: u8 = 0;
    let mut run: u32 = 0;
    for col in 0..width {
        for row in 0..height {
            let v = if mask[(row, col)] != 0 { 1 } else { 0 };
            if v == current {
                run += 1;
            } else {
                counts.push(run);
                current = v;
                run = 1;
            }
        }
    }
    counts.push(run);
    if height * width == 0 {
        counts.clear();
    }
    RleMask {
        height,
        width,
        counts,
    }
}

/// Decode run lengths back into a binary mask.
pub fn rle_decode(rle: &RleMask) -> Result<Array2<u8>> {
    rle.validate()?;
    let mut flat = Vec::with_capacity(rle.height * rle.width);
    let mut value: u8 = 0;
    for &count in &rle.counts {
        flat.extend(std::iter::repeat(value).take(count as usize));
        value ^= 1;
    }
    // Column-major runs: build the array by transposing the flat order.
    let mut mask = Array2::zeros((rle.height, rle.width));
    for col in 0..rle.width {
        for row in 0..rle.height {
            mask[(row, col)] = flat[col * rle.height + row];
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn all_zero_mask_single_run() {
        let mask = Array2::<u8>::zeros((2, 2));
        assert_eq!(rle_encode(&mask).counts, vec![4]);
    }

    #[test]
    fn all_one_mask_leading_empty_run() {
        let mask = Array2::<u8>::ones((2, 2));
        assert_eq!(rle_encode(&mask).counts, vec![0, 4]);
    }

    #[test]
    fn single_pixel_column_major_walk() {
        // Pixel (row 0, col 1): column-major order is (0,0),(1,0),(0,1),(1,1)
        // giving runs 0,0,1,0 -> [2,1,1].
        let mask = array![[0u8, 1], [0, 0]];
        assert_eq!(rle_encode(&mask).counts, vec![2, 1, 1]);
    }

    #[test]
    fn decode_trivial_cases() {
        let zero = RleMask {
            height: 2,
            width: 2,
            counts: vec![4],
        };
        assert_eq!(rle_decode(&zero).unwrap(), Array2::<u8>::zeros((2, 2)));

        let one = RleMask {
            height: 2,
            width: 2,
            counts: vec![0, 4],
        };
        assert_eq!(rle_decode(&one).unwrap(), Array2::<u8>::ones((2, 2)));

        let pixel = RleMask {
            height: 2,
            width: 2,
            counts: vec![2, 1, 1],
        };
        assert_eq!(rle_decode(&pixel).unwrap(), array![[0u8, 1], [0, 0]]);
    }

    #[test]
    fn decode_rejects_bad_sum() {
        let bad = RleMask {
            height: 2,
            width: 2,
            counts: vec![3],
        };
        match rle_decode(&bad) {
            Err(Error::SumMismatch { sum: 3, expected: 4 }) => {}
            other => panic!("expected SumMismatch, got {other:?}"),
        }
    }

    #[test]
    fn area_counts_foreground() {
        let mask = array![[0u8, 1], [1, 1]];
        let rle = rle_encode(&mask);
        assert_eq!(rle.area(), 3);
        assert_eq!(rle.sum(), 4);
    }

    proptest! {
        #[test]
        fn roundtrip_identity(h in 1usize..=64, w in 1usize..=64, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mask = Array2::from_shape_fn((h, w), |_| u8::from(rng.random_bool(0.5)));
            let rle = rle_encode(&mask);
            prop_assert_eq!(rle.sum(), h * w);
            let decoded = rle_decode(&rle).unwrap();
            prop_assert_eq!(&decoded, &mask);
            prop_assert_eq!(rle_encode(&decoded), rle);
        }
    }
}
