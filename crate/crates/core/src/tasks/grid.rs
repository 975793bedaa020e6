//! Difficulty grids: one-axis sweeps around each task's baseline setting.

use super::{TaskConfig, TaskKind};

const RECALL_LENGTHS: [u32; 4] = [128, 256, 512, 1024];
const TRAIN_SIZES: [u32; 5] = [12_800, 6_400, 3_200, 1_600, 800];
const SMALL_VOCABS: [u32; 4] = [16, 32, 64, 128];
const NOISE_SHARES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
const COPY_LENGTHS: [u32; 3] = [256, 512, 1024];
const COPY_COUNTS: [u32; 4] = [16, 32, 64, 96];
const COMPRESSION_LENGTHS: [u32; 4] = [32, 64, 128, 256];
const MEMORIZATION_VOCABS: [u32; 6] = [256, 512, 1024, 2048, 4096, 8192];

/// Every setting of the difficulty grid of `kind`, baseline first. Only one
/// variable differs from the baseline in each setting.
pub fn difficulty_grid(kind: TaskKind) -> Vec<TaskConfig> {
    let base = TaskConfig::baseline(kind);
    let mut out = vec![base.clone()];
    let mut push = |c: TaskConfig| {
        if !out.contains(&c) {
            out.push(c);
        }
    };
    let lengths: &[u32] = match kind {
        TaskKind::SelectiveCopy => &COPY_LENGTHS,
        TaskKind::Compression => &COMPRESSION_LENGTHS,
        TaskKind::Memorization => &[],
        _ => &RECALL_LENGTHS,
    };
    for &l in lengths {
        push(base.clone().with_seq_len(l));
    }
    if kind != TaskKind::Memorization {
        for &n in &TRAIN_SIZES {
            push(base.clone().with_train_samples(n));
        }
    }
    let vocabs: &[u32] = if kind == TaskKind::Memorization { &MEMORIZATION_VOCABS } else { &SMALL_VOCABS };
    for &v in vocabs {
        push(base.clone().with_vocab(v));
    }
    if kind == TaskKind::NoisyRecall {
        for &s in &NOISE_SHARES {
            push(base.clone().with_noise_share(s));
        }
    }
    if kind == TaskKind::SelectiveCopy {
        for &c in &COPY_COUNTS {
            push(base.clone().with_copy_count(c));
        }
    }
    out
}

/// Desk-scale setting of a task: the baseline with sequence length capped at
/// 128 and the training set capped at 800 samples.
pub fn desk_config(kind: TaskKind) -> TaskConfig {
    let base = TaskConfig::baseline(kind);
    let seq = base.seq_len.min(128);
    let train = base.train_samples.min(800);
    base.with_seq_len(seq).with_train_samples(train)
}

/// The reduced grid used by the desk preset: one setting per task.
pub fn desk_grid(kind: TaskKind) -> Vec<TaskConfig> {
    vec![desk_config(kind)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes() -> Vec<(TaskKind, usize)> {
        TaskKind::ALL.iter().map(|&k| (k, difficulty_grid(k).len())).collect()
    }

    #[test]
    fn grid_sizes() {
        // recall: 1 + 3 lengths + 4 sizes + 3 vocabularies
        let expected = [
            (TaskKind::Recall, 11),
            (TaskKind::FuzzyRecall, 11),
            (TaskKind::NoisyRecall, 14),
            (TaskKind::SelectiveCopy, 13),
            (TaskKind::Compression, 11),
            (TaskKind::Memorization, 6),
        ];
        assert_eq!(sizes(), expected);
    }

    #[test]
    fn grids_vary_one_axis_at_a_time() {
        for kind in TaskKind::ALL {
            let grid = difficulty_grid(kind);
            let base = &grid[0];
            assert_eq!(grid.iter().filter(|c| *c == base).count(), 1);
            for c in &grid[1..] {
                let diffs = [
                    c.seq_len != base.seq_len,
                    c.train_samples != base.train_samples,
                    c.vocab != base.vocab,
                    c.noise_share != base.noise_share,
                    c.copy_count != base.copy_count,
                ];
                assert_eq!(diffs.iter().filter(|&&d| d).count(), 1, "{}", c.label());
                c.validate().unwrap();
            }
        }
    }

    #[test]
    fn grid_values_are_exact() {
        let g = difficulty_grid(TaskKind::NoisyRecall);
        let mut shares: Vec<f64> = g.iter().map(|c| c.noise_share).collect();
        shares.sort_by(f64::total_cmp);
        shares.dedup();
        assert_eq!(shares, NOISE_SHARES);
        let mut lens: Vec<u32> = difficulty_grid(TaskKind::SelectiveCopy).iter().map(|c| c.seq_len).collect();
        lens.sort();
        lens.dedup();
        assert_eq!(lens, COPY_LENGTHS);
        let vocabs: Vec<u32> = difficulty_grid(TaskKind::Memorization).iter().map(|c| c.vocab.total_size).collect();
        assert_eq!(vocabs, MEMORIZATION_VOCABS);
    }

    #[test]
    fn desk_configs_are_capped() {
        let c = desk_config(TaskKind::SelectiveCopy);
        assert_eq!((c.seq_len, c.train_samples, c.copy_count), (128, 800, 16));
        let m = desk_config(TaskKind::Memorization);
        assert_eq!((m.seq_len, m.train_samples), (32, 256));
    }
}
