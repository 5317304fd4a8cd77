use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

use super::RgbdDataset;

/// Builds the S3 training set: `add_count` generated samples split evenly
/// between the two generators (an odd extra comes from `gen_s1`), optionally
/// appended to the original data, then shuffled with a seeded permutation.
pub fn merge_s3(
    original: &RgbdDataset,
    gen_s1: &RgbdDataset,
    gen_s2: &RgbdDataset,
    add_count: usize,
    include_original: bool,
    seed: u64,
) -> Result<RgbdDataset> {
    for (name, ds) in [("s1", gen_s1), ("s2", gen_s2)] {
        if ds.resolution() != original.resolution() || ds.max_depth_m() != original.max_depth_m() {
            return Err(Error::Capacity(format!(
                "{name} set is {}x{} @ {} m but the original is {}x{} @ {} m",
                ds.width(),
                ds.height(),
                ds.max_depth_m(),
                original.width(),
                original.height(),
                original.max_depth_m()
            )));
        }
    }
    let from_s1 = add_count.div_ceil(2);
    let from_s2 = add_count / 2;
    if gen_s1.len() < from_s1 || gen_s2.len() < from_s2 {
        return Err(Error::Capacity(format!(
            "adding {add_count} samples needs {from_s1} from s1 and {from_s2} from s2; have {} and {}",
            gen_s1.len(),
            gen_s2.len()
        )));
    }
    let mut samples = Vec::with_capacity(add_count + original.len());
    if include_original {
        samples.extend_from_slice(original.samples());
    }
    samples.extend_from_slice(&gen_s1.samples()[..from_s1]);
    samples.extend_from_slice(&gen_s2.samples()[..from_s2]);
    samples.shuffle(&mut rng::stream(seed, "merge-s3", 0));
    RgbdDataset::from_samples(original.width(), original.height(), original.max_depth_m(), samples)
}
