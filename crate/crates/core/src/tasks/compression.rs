//! Compression: a random sequence closed by a compression token. The model's
//! output at that token, plus a fixed sinusoidal embedding of position `i`,
//! must let a small decoder reconstruct the token at `i`. Targets hold the
//! tokens to reconstruct and the mask marks the positions to reconstruct.

use rand::Rng;

use super::{build_samples, sample_count, split_seed, Dataset, Sample, SpecialRole, Split, TaskConfig, TaskKind};
use crate::error::{Error, Result};
use crate::rng;

pub fn gen_compression(config: &TaskConfig, seed: u64) -> Result<Dataset> {
    generate(config, seed, Split::Train)
}

pub(super) fn generate(config: &TaskConfig, seed: u64, split: Split) -> Result<Dataset> {
    if config.kind != TaskKind::Compression {
        return Err(Error::config(format!("`{}` is not compression", config.kind)));
    }
    config.validate()?;
    if config.seq_len < 2 {
        return Err(Error::config("compression needs at least one content token"));
    }
    let v = &config.vocab;
    let compress = v.special(SpecialRole::Compress);
    let pad = v.special(SpecialRole::Pad);
    let content = v.content();
    let len = config.seq_len as usize;
    let s = split_seed(seed, split);
    let samples = build_samples(sample_count(config, split), |i| {
        let mut rng = rng::stream("compression", s, i);
        let mut input: Vec<u32> = (0..len - 1).map(|_| rng.random_range(content.clone())).collect();
        let mut target = input.clone();
        input.push(compress);
        target.push(pad);
        let mut mask = vec![true; len];
        mask[len - 1] = false;
        Ok(Sample { input, target, mask })
    })?;
    Ok(Dataset { config: config.clone(), split, samples, seed })
}
