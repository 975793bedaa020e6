//! In-context recall and its fuzzy and noisy variants.
//!
//! A sequence is a context segment of key-value pairs, a separator token and a
//! query segment whose keys were all presented in the context. The key to value
//! map is drawn afresh for every sequence. A position is scored when its input
//! is (the last token of) a key that already appeared earlier in the sequence,
//! in which case the target is the next value token. Targets are the inputs
//! shifted by one.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{build_samples, sample_count, split_seed, Dataset, Sample, SpecialRole, Split, TaskConfig, TaskKind};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// Generates the training split of a recall-family task.
pub fn gen_recall(config: &TaskConfig, seed: u64) -> Result<Dataset> {
    generate(config, seed, Split::Train)
}

pub(super) fn generate(config: &TaskConfig, seed: u64, split: Split) -> Result<Dataset> {
    check(config)?;
    let s = split_seed(seed, split);
    let label = config.kind.name();
    let samples = build_samples(sample_count(config, split), |i| {
        let mut rng = rng::stream(label, s, i);
        match config.kind {
            TaskKind::FuzzyRecall => fuzzy_sample(config, &mut rng),
            _ => plain_sample(config, &mut rng),
        }
    })?;
    Ok(Dataset { config: config.clone(), split, samples, seed })
}

fn check(config: &TaskConfig) -> Result<()> {
    if !config.kind.is_recall_family() {
        return Err(Error::config(format!("`{}` is not a recall task", config.kind)));
    }
    config.validate()?;
    let v = &config.vocab;
    if v.key_tokens.is_empty() || v.key_tokens.len() != v.value_tokens.len() {
        return Err(Error::config("recall needs equal, non-empty key and value halves"));
    }
    if config.kind == TaskKind::NoisyRecall && config.noise_share > 0.0 && v.noise_tokens.is_none() {
        return Err(Error::config("noisy recall needs a noise vocabulary"));
    }
    let noise = noise_count(config);
    // separator + one context pair + one query pair
    let min_len = 1 + 2 * 2 * config.max_kv_len.min(1) + noise;
    if config.seq_len < min_len.max(5) {
        return Err(Error::config(format!(
            "sequence length {} too short for a key-value pair and its query",
            config.seq_len
        )));
    }
    Ok(())
}

fn noise_count(config: &TaskConfig) -> u32 {
    if config.kind == TaskKind::NoisyRecall {
        (config.noise_share * config.seq_len as f64).round() as u32
    } else {
        0
    }
}

/// One unit of the sequence layout.
enum Unit {
    Pair(u32, u32),
    Separator,
}

fn plain_sample(config: &TaskConfig, rng: &mut StreamRng) -> Result<Sample> {
    let v = &config.vocab;
    let keys: Vec<u32> = v.key_tokens.clone().collect();
    let mut values: Vec<u32> = v.value_tokens.clone().collect();
    values.shuffle(rng);

    let n_noise = noise_count(config);
    let budget = config.seq_len - 1 - n_noise;
    let n_pairs = budget / 2;
    if n_pairs < 2 {
        return Err(Error::config("not enough room for a key-value pair and a query"));
    }
    let n_ctx = n_pairs.div_ceil(2);
    let n_query = n_pairs - n_ctx;

    let mut units = Vec::with_capacity(n_pairs as usize + 1);
    let mut presented = Vec::new();
    for _ in 0..n_ctx {
        let ki = rng.random_range(0..keys.len());
        if !presented.contains(&ki) {
            presented.push(ki);
        }
        units.push(Unit::Pair(keys[ki], values[ki]));
    }
    units.push(Unit::Separator);
    for _ in 0..n_query {
        let ki = presented[rng.random_range(0..presented.len())];
        units.push(Unit::Pair(keys[ki], values[ki]));
    }

    // noise tokens go into uniformly chosen gaps between units
    let mut gap_noise = vec![Vec::new(); units.len() + 1];
    if n_noise > 0 {
        let noise = v.noise_tokens.clone().expect("checked");
        for _ in 0..n_noise {
            let gap = rng.random_range(0..gap_noise.len());
            gap_noise[gap].push(rng.random_range(noise.clone()));
        }
    }

    let sep = v.special(SpecialRole::Separator);
    let pad = v.special(SpecialRole::Pad);
    let len = config.seq_len as usize;
    let mut input = Vec::with_capacity(len);
    let mut scored = Vec::with_capacity(len);
    let mut seen = HashSet::new();
    for (gap, unit) in gap_noise.iter().zip(units.iter().map(Some).chain(std::iter::once(None))) {
        for &n in gap {
            input.push(n);
            scored.push(false);
        }
        match unit {
            Some(Unit::Pair(k, val)) => {
                input.push(*k);
                scored.push(!seen.insert(*k));
                input.push(*val);
                scored.push(false);
            }
            Some(Unit::Separator) => {
                input.push(sep);
                scored.push(false);
            }
            None => {}
        }
    }
    while input.len() < len {
        input.push(pad);
        scored.push(false);
    }
    Ok(shifted(input, scored, pad))
}

/// Builds targets as inputs shifted by one; `scored[t]` marks positions whose
/// next token is scored.
fn shifted(input: Vec<u32>, scored: Vec<bool>, pad: u32) -> Sample {
    let mut target: Vec<u32> = input[1..].to_vec();
    target.push(pad);
    let mut mask = scored;
    if let Some(last) = mask.last_mut() {
        *last = false;
    }
    Sample { input, target, mask }
}

fn random_tuple(rng: &mut StreamRng, tokens: &[u32], max_len: u32) -> Vec<u32> {
    let len = rng.random_range(1..=max_len) as usize;
    (0..len).map(|_| tokens[rng.random_range(0..tokens.len())]).collect()
}

fn fuzzy_sample(config: &TaskConfig, rng: &mut StreamRng) -> Result<Sample> {
    let v = &config.vocab;
    let key_tokens: Vec<u32> = v.key_tokens.clone().collect();
    let value_tokens: Vec<u32> = v.value_tokens.clone().collect();
    let max = config.max_kv_len;

    // dictionary of distinct key tuples, one per key token
    let n_keys = key_tokens.len();
    let mut keys: Vec<Vec<u32>> = Vec::with_capacity(n_keys);
    let mut attempts = 0;
    while keys.len() < n_keys {
        let k = random_tuple(rng, &key_tokens, max);
        if !keys.contains(&k) {
            keys.push(k);
        }
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::config("cannot draw distinct fuzzy keys"));
        }
    }
    let values: Vec<Vec<u32>> = (0..n_keys).map(|_| random_tuple(rng, &value_tokens, max)).collect();

    let len = config.seq_len as usize;
    let ctx_budget = (len - 1) / 2;
    let sep = v.special(SpecialRole::Separator);
    let pad = v.special(SpecialRole::Pad);

    let mut input = Vec::with_capacity(len);
    let mut scored = Vec::with_capacity(len);
    let mut seen: HashSet<usize> = HashSet::new();
    let mut presented: Vec<usize> = Vec::new();

    let mut push_pair = |ki: usize, input: &mut Vec<u32>, scored: &mut Vec<bool>| {
        let key = &keys[ki];
        let val = &values[ki];
        let score = key.len() as u32 == max && !seen.insert(ki);
        seen.insert(ki);
        for (j, &t) in key.iter().enumerate() {
            input.push(t);
            scored.push(score && j + 1 == key.len());
        }
        for (j, &t) in val.iter().enumerate() {
            input.push(t);
            scored.push(score && j + 1 < val.len());
        }
    };

    loop {
        let ki = rng.random_range(0..n_keys);
        if input.len() + keys[ki].len() + values[ki].len() > ctx_budget {
            break;
        }
        if !presented.contains(&ki) {
            presented.push(ki);
        }
        push_pair(ki, &mut input, &mut scored);
    }
    if presented.is_empty() {
        return Err(Error::config("sequence too short for a fuzzy key-value pair"));
    }
    input.push(sep);
    scored.push(false);
    loop {
        let ki = presented[rng.random_range(0..presented.len())];
        if input.len() + keys[ki].len() + values[ki].len() > len {
            break;
        }
        push_pair(ki, &mut input, &mut scored);
    }
    while input.len() < len {
        input.push(pad);
        scored.push(false);
    }
    Ok(shifted(input, scored, pad))
}
