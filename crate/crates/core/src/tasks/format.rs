//! Binary dataset files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "MAD1" | version u32 | kind u8 | vocab u32
//! special count u8 | (role u8, id u32) * count
//! seq_len u32 | sample count u64 | seed u64
//! split u8 | noise vocab u32 | noise share f64 | copy count u32
//! max kv len u32 | train samples u64 | eval samples u64
//! per sample: input u16 * seq_len | target u16 * seq_len | mask bits (LSB first, byte padded)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Dataset, Sample, SpecialRole, Split, TaskConfig, TaskKind, VocabSpec};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MAD1";
pub const VERSION: u32 = 1;

/// Header size in bytes for a dataset with `n_special` special tokens.
pub fn header_len(n_special: usize) -> usize {
    4 + 4 + 1 + 4 + 1 + 5 * n_special + 4 + 8 + 8 + (1 + 4 + 8 + 4 + 4 + 8 + 8)
}

/// Bytes taken by one sample of length `seq_len`.
pub fn sample_len(seq_len: usize) -> usize {
    2 * seq_len * 2 + seq_len.div_ceil(8)
}

pub fn encode(d: &Dataset) -> Result<Vec<u8>> {
    let c = &d.config;
    c.vocab.validate()?;
    let len = c.seq_len as usize;
    let specials = &c.vocab.special_tokens;
    let mut out = Vec::with_capacity(header_len(specials.len()) + d.samples.len() * sample_len(len));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(c.kind.code());
    out.extend_from_slice(&c.vocab.total_size.to_le_bytes());
    out.push(specials.len() as u8);
    for (role, id) in specials {
        out.push(role.code());
        out.extend_from_slice(&id.to_le_bytes());
    }
    out.extend_from_slice(&c.seq_len.to_le_bytes());
    out.extend_from_slice(&(d.samples.len() as u64).to_le_bytes());
    out.extend_from_slice(&d.seed.to_le_bytes());
    out.push(d.split.code());
    out.extend_from_slice(&c.vocab.noise_size().to_le_bytes());
    out.extend_from_slice(&c.noise_share.to_le_bytes());
    out.extend_from_slice(&c.copy_count.to_le_bytes());
    out.extend_from_slice(&c.max_kv_len.to_le_bytes());
    out.extend_from_slice(&(c.train_samples as u64).to_le_bytes());
    out.extend_from_slice(&(c.eval_samples as u64).to_le_bytes());
    for (i, s) in d.samples.iter().enumerate() {
        if s.input.len() != len || s.target.len() != len || s.mask.len() != len {
            return Err(Error::shape(format!("sample {i} does not have length {len}")));
        }
        for &t in s.input.iter().chain(&s.target) {
            let t = u16::try_from(t).map_err(|_| Error::Format(format!("token {t} exceeds 16 bits")))?;
            out.extend_from_slice(&t.to_le_bytes());
        }
        for chunk in s.mask.chunks(8) {
            let byte = chunk.iter().enumerate().fold(0u8, |b, (j, &m)| b | ((m as u8) << j));
            out.push(byte);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(Error::Truncated { what, expected: n - rest });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Dataset> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let code = r.u8("task kind")?;
    let kind = TaskKind::from_code(code).ok_or_else(|| Error::Format(format!("unknown task kind {code}")))?;
    let content = r.u32("vocabulary size")?;
    let n_special = r.u8("special table")? as usize;
    let mut specials = BTreeMap::new();
    for _ in 0..n_special {
        let rc = r.u8("special table")?;
        let role = SpecialRole::from_code(rc).ok_or_else(|| Error::Format(format!("unknown special role {rc}")))?;
        specials.insert(role, r.u32("special table")?);
    }
    let seq_len = r.u32("sequence length")?;
    let count = r.u64("sample count")?;
    let seed = r.u64("seed")?;
    let sc = r.u8("split")?;
    let split = Split::from_code(sc).ok_or_else(|| Error::Format(format!("unknown split {sc}")))?;
    let noise = r.u32("noise vocabulary")?;
    let noise_share = f64::from_bits(r.u64("noise share")?);
    let copy_count = r.u32("copy count")?;
    let max_kv_len = r.u32("max key length")?;
    let train_samples = r.u64("train samples")? as u32;
    let eval_samples = r.u64("eval samples")? as u32;

    let mut vocab = VocabSpec::new(content, kind.divides_vocab(), noise);
    vocab.special_tokens = specials;
    vocab.validate().map_err(|e| Error::Format(format!("invalid vocabulary: {e}")))?;
    let config = TaskConfig { kind, seq_len, vocab, train_samples, eval_samples, noise_share, copy_count, max_kv_len };

    let len = seq_len as usize;
    let body = (count as usize)
        .checked_mul(sample_len(len))
        .ok_or_else(|| Error::Format("sample count overflows".into()))?;
    let rest = buf.len() - r.pos;
    if rest < body {
        return Err(Error::Truncated { what: "samples", expected: body - rest });
    }
    if rest > body {
        return Err(Error::Format(format!("{} trailing bytes", rest - body)));
    }
    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let toks = |b: &[u8]| b.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as u32).collect::<Vec<_>>();
        let input = toks(r.take(2 * len, "samples")?);
        let target = toks(r.take(2 * len, "samples")?);
        let bits = r.take(len.div_ceil(8), "samples")?;
        let mask = (0..len).map(|t| bits[t / 8] >> (t % 8) & 1 == 1).collect();
        samples.push(Sample { input, target, mask });
    }
    Ok(Dataset { config, split, samples, seed })
}

pub fn serialize_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(d)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
