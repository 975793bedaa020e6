//! Selective copying: content tokens scattered among blank tokens must be
//! reproduced, in order, at the insert tokens that close the sequence.

use rand::seq::index;
use rand::Rng;

use super::{build_samples, sample_count, split_seed, Dataset, Sample, SpecialRole, Split, TaskConfig, TaskKind};
use crate::error::{Error, Result};
use crate::rng;

pub fn gen_selective_copy(config: &TaskConfig, seed: u64) -> Result<Dataset> {
    generate(config, seed, Split::Train)
}

pub(super) fn generate(config: &TaskConfig, seed: u64, split: Split) -> Result<Dataset> {
    if config.kind != TaskKind::SelectiveCopy {
        return Err(Error::config(format!("`{}` is not selective copying", config.kind)));
    }
    config.validate()?;
    let n = config.copy_count as usize;
    let len = config.seq_len as usize;
    if n == 0 || 2 * n > len {
        return Err(Error::config(format!(
            "{n} content tokens plus {n} insert tokens do not fit in {len} positions"
        )));
    }
    let v = &config.vocab;
    let blank = v.special(SpecialRole::Blank);
    let insert = v.special(SpecialRole::Insert);
    let pad = v.special(SpecialRole::Pad);
    let content = v.content();
    let region = len - n;
    let s = split_seed(seed, split);
    let samples = build_samples(sample_count(config, split), |i| {
        let mut rng = rng::stream("selective_copy", s, i);
        let mut positions = index::sample(&mut rng, region, n).into_vec();
        positions.sort_unstable();
        let mut input = vec![blank; len];
        let mut target = vec![pad; len];
        let mut mask = vec![false; len];
        for (j, &p) in positions.iter().enumerate() {
            let tok = rng.random_range(content.clone());
            input[p] = tok;
            input[region + j] = insert;
            target[region + j] = tok;
            mask[region + j] = true;
        }
        Ok(Sample { input, target, mask })
    })?;
    Ok(Dataset { config: config.clone(), split, samples, seed })
}
