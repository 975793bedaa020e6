//! Memorization: a fixed key to value dictionary shared by every sample of
//! both splits. Inputs are `key, insert` pairs; values only ever appear as
//! targets at the insert positions.

use rand::Rng;

use super::{build_samples, sample_count, split_seed, Dataset, Sample, SpecialRole, Split, TaskConfig, TaskKind};
use crate::error::{Error, Result};
use crate::rng;

pub fn gen_memorization(config: &TaskConfig, seed: u64) -> Result<Dataset> {
    generate(config, seed, Split::Train)
}

/// The fact dictionary for a base seed: `dict[k - keys.start]` is the value of key `k`.
pub fn fact_dictionary(config: &TaskConfig, seed: u64) -> Vec<u32> {
    let mut rng = rng::stream("memorization/facts", seed, 0);
    let values = config.vocab.value_tokens.clone();
    config.vocab.key_tokens.clone().map(|_| rng.random_range(values.clone())).collect()
}

pub(super) fn generate(config: &TaskConfig, seed: u64, split: Split) -> Result<Dataset> {
    if config.kind != TaskKind::Memorization {
        return Err(Error::config(format!("`{}` is not memorization", config.kind)));
    }
    config.validate()?;
    let v = &config.vocab;
    if v.key_tokens.is_empty() || v.value_tokens.is_empty() {
        return Err(Error::config("vocabulary halves too small for a fact dictionary"));
    }
    if config.seq_len < 2 {
        return Err(Error::config("memorization needs room for one key and its insert token"));
    }
    let dict = fact_dictionary(config, seed);
    let insert = v.special(SpecialRole::Insert);
    let pad = v.special(SpecialRole::Pad);
    let keys = v.key_tokens.clone();
    let len = config.seq_len as usize;
    let s = split_seed(seed, split);
    let samples = build_samples(sample_count(config, split), |i| {
        let mut rng = rng::stream("memorization", s, i);
        let mut input = vec![pad; len];
        let mut target = vec![pad; len];
        let mut mask = vec![false; len];
        for p in 0..len / 2 {
            let k = rng.random_range(keys.clone());
            input[2 * p] = k;
            input[2 * p + 1] = insert;
            target[2 * p + 1] = dict[(k - keys.start) as usize];
            mask[2 * p + 1] = true;
        }
        Ok(Sample { input, target, mask })
    })?;
    Ok(Dataset { config: config.clone(), split, samples, seed })
}
