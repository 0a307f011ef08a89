//! Dataset ingestion and preparation.
//!
//! # Piano-roll text format
//!
//! ```text
//! pianoroll v1 dim=<d>
//! 0,2;1;-
//! 5;5,7
//! ```
//!
//! One sequence per line. Timesteps are separated by `;`, active note indices
//! within a timestep by `,`, and a silent timestep is written `-`.
//!
//! # Signal text format
//!
//! ```text
//! signal v1 count=<n>
//! 0.125 -0.5 0.25 ...
//! ```
//!
//! One sequence per line as space-separated decimal reals.
//!
//! # Signal binary format
//!
//! All integers little-endian.
//!
//! ```text
//! offset 0   4 bytes  magic "GBSG"
//! offset 4   u32      version (1)
//! offset 8   u64      sequence count
//! offset 16  per sequence: u32 sample count, then that many f32 samples
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::SequenceBatchItem;
use crate::numerics::{RngStream, Vector};

pub const PIANOROLL_HEADER: &str = "pianoroll v1";
pub const SIGNAL_HEADER: &str = "signal v1";
pub const SIGNAL_MAGIC: &[u8; 4] = b"GBSG";
pub const SIGNAL_BINARY_VERSION: u32 = 1;
pub const DEFAULT_IN_LEN: usize = 20;
pub const DEFAULT_OUT_LEN: usize = 10;

/// Binary piano-roll sequences. Each timestep is a sorted set of active indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PianoRollDataset {
    pub dim: usize,
    pub sequences: Vec<Vec<Vec<usize>>>,
}

impl PianoRollDataset {
    /// Validates the invariants and sorts/deduplicates every timestep.
    pub fn new(dim: usize, mut sequences: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("piano-roll dim must be >= 1".into()));
        }
        for (i, seq) in sequences.iter_mut().enumerate() {
            check_sequence(seq, dim).map_err(|m| Error::Data(format!("sequence {i}: {m}")))?;
            for step in seq.iter_mut() {
                step.sort_unstable();
                step.dedup();
            }
        }
        Ok(PianoRollDataset { dim, sequences })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let dim = parse_header(header, PIANOROLL_HEADER, "dim", 1)?;
        if dim == 0 {
            return Err(Error::Data("line 1: dim must be >= 1".into()));
        }
        let mut sequences = Vec::new();
        for (i, raw) in lines {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() {
                return Err(Error::Data(format!("line {line}: empty sequence")));
            }
            let mut seq = Vec::new();
            for step in raw.split(';') {
                let step = step.trim();
                let mut active = Vec::new();
                if step != "-" {
                    for tok in step.split(',') {
                        let ix: usize = tok.trim().parse().map_err(|_| Error::Parse {
                            line,
                            msg: format!("bad note index {tok:?}"),
                        })?;
                        active.push(ix);
                    }
                }
                seq.push(active);
            }
            check_sequence(&seq, dim).map_err(|m| Error::Data(format!("line {line}: {m}")))?;
            sequences.push(seq);
        }
        PianoRollDataset::new(dim, sequences)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{PIANOROLL_HEADER} dim={}\n", self.dim);
        for seq in &self.sequences {
            let steps: Vec<String> = seq
                .iter()
                .map(|s| {
                    if s.is_empty() {
                        "-".to_string()
                    } else {
                        s.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
                    }
                })
                .collect();
            out.push_str(&steps.join(";"));
            out.push('\n');
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> PianoRollDataset {
        PianoRollDataset {
            dim: self.dim,
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
        }
    }

    /// Next-step pairing: a sequence of length L yields T = L − 1 steps.
    pub fn to_items(&self) -> Result<Vec<SequenceBatchItem>> {
        self.sequences.iter().map(|s| pianoroll_item(s, self.dim)).collect()
    }
}

fn check_sequence(seq: &[Vec<usize>], dim: usize) -> std::result::Result<(), String> {
    if seq.len() < 2 {
        return Err(format!("sequence has {} timesteps, need at least 2", seq.len()));
    }
    for step in seq {
        if let Some(ix) = step.iter().find(|&&ix| ix >= dim) {
            return Err(format!("note index {ix} out of range for dim {dim}"));
        }
    }
    Ok(())
}

fn parse_header(line: &str, magic: &str, key: &str, line_no: usize) -> Result<usize> {
    let rest = line.trim().strip_prefix(magic).ok_or_else(|| Error::Parse {
        line: line_no,
        msg: format!("expected header {magic:?}"),
    })?;
    let value = rest
        .trim()
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("header lacks {key}=<n>"),
        })?;
    value.trim().parse().map_err(|_| Error::Parse {
        line: line_no,
        msg: format!("bad {key} value {value:?}"),
    })
}

pub fn load_pianoroll(path: impl AsRef<Path>) -> Result<PianoRollDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PianoRollDataset::parse(&text)
}

pub fn save_pianoroll(dataset: &PianoRollDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset.to_text()).map_err(|e| Error::io(path, e))
}

/// 1.0 at every active index, 0.0 elsewhere.
pub fn binarize_step(active: &[usize], dim: usize) -> Result<Vector> {
    let mut v = Vector::zeros(dim);
    for &ix in active {
        if ix >= dim {
            return Err(Error::Data(format!("note index {ix} out of range for dim {dim}")));
        }
        v[ix] = 1.0;
    }
    Ok(v)
}

/// Indices of the nonzero entries.
pub fn active_indices(v: &[f64]) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, &x)| x != 0.0)
        .map(|(i, _)| i)
        .collect()
}

pub fn pianoroll_item(seq: &[Vec<usize>], dim: usize) -> Result<SequenceBatchItem> {
    if seq.len() < 2 {
        return Err(Error::Data("piano-roll sequence needs at least 2 timesteps".into()));
    }
    let frames = seq
        .iter()
        .map(|s| binarize_step(s, dim))
        .collect::<Result<Vec<_>>>()?;
    SequenceBatchItem::new(frames[..frames.len() - 1].to_vec(), frames[1..].to_vec())
}

/// Real-valued sequences plus the normalization that was applied to them
/// (`normalized = (raw − sample_mean) / sample_std`).
#[derive(Clone, Debug, PartialEq)]
pub struct SignalDataset {
    pub sequences: Vec<Vec<f64>>,
    pub sample_mean: f64,
    pub sample_std: f64,
}

impl SignalDataset {
    /// Unnormalized data (identity normalization record).
    pub fn raw(sequences: Vec<Vec<f64>>) -> Self {
        SignalDataset {
            sequences,
            sample_mean: 0.0,
            sample_std: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Pooled mean and population standard deviation over every sample.
    pub fn stats(&self) -> Result<(f64, f64)> {
        let count: usize = self.sequences.iter().map(Vec::len).sum();
        if count == 0 {
            return Err(Error::Data("signal dataset has no samples".into()));
        }
        let n = count as f64;
        let mean = self.sequences.iter().flatten().sum::<f64>() / n;
        let var = self
            .sequences
            .iter()
            .flatten()
            .map(|x| (x - mean).powi(2))
            .sum::<f64>()
            / n;
        Ok((mean, var.sqrt()))
    }

    /// Applies `(x − mean) / std` and composes it with the existing record.
    pub fn normalized_with(&self, mean: f64, std: f64) -> Result<SignalDataset> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::Data(format!("cannot normalize with mean {mean}, std {std}")));
        }
        Ok(SignalDataset {
            sequences: self
                .sequences
                .iter()
                .map(|s| s.iter().map(|x| (x - mean) / std).collect())
                .collect(),
            sample_mean: self.sample_mean + mean * self.sample_std,
            sample_std: self.sample_std * std,
        })
    }

    /// Normalizes with this dataset's own statistics.
    pub fn normalized(&self) -> Result<SignalDataset> {
        let (mean, std) = self.stats()?;
        self.normalized_with(mean, std)
    }

    pub fn subset(&self, indices: &[usize]) -> SignalDataset {
        SignalDataset {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            sample_mean: self.sample_mean,
            sample_std: self.sample_std,
        }
    }

    pub fn to_items(&self, in_len: usize, out_len: usize, stride: usize) -> Result<Vec<SequenceBatchItem>> {
        self.sequences
            .iter()
            .map(|s| window_signal_strided(s, in_len, out_len, stride))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let count = parse_header(header, SIGNAL_HEADER, "count", 1)?;
        let mut sequences = Vec::with_capacity(count);
        for (i, raw) in lines {
            if raw.trim().is_empty() {
                continue;
            }
            let seq = raw
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::Parse {
                            line: i + 1,
                            msg: format!("bad sample {tok:?}"),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            sequences.push(seq);
        }
        if sequences.len() != count {
            return Err(Error::Data(format!(
                "header declares {count} sequences, found {}",
                sequences.len()
            )));
        }
        Ok(SignalDataset::raw(sequences))
    }

    /// Shortest decimal form that round-trips each sample exactly.
    pub fn to_text(&self) -> String {
        let mut out = format!("{SIGNAL_HEADER} count={}\n", self.sequences.len());
        for seq in &self.sequences {
            for (i, x) in seq.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{x:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let total: usize = self.sequences.iter().map(|s| 4 + 4 * s.len()).sum();
        let mut buf = Vec::with_capacity(16 + total);
        buf.extend_from_slice(SIGNAL_MAGIC);
        buf.extend_from_slice(&SIGNAL_BINARY_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.sequences.len() as u64).to_le_bytes());
        for seq in &self.sequences {
            buf.extend_from_slice(&(seq.len() as u32).to_le_bytes());
            for &x in seq {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        buf
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Data("truncated signal file".into());
        if bytes.len() < 16 || &bytes[..4] != SIGNAL_MAGIC {
            return Err(Error::Data("not a binary signal file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != SIGNAL_BINARY_VERSION {
            return Err(Error::Data(format!("unsupported signal file version {version}")));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let mut pos = 16usize;
        let mut sequences = Vec::new();
        for _ in 0..count {
            let len_bytes = bytes.get(pos..pos + 4).ok_or_else(truncated)?;
            let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            pos += 4;
            let body = bytes.get(pos..pos + 4 * len).ok_or_else(truncated)?;
            sequences.push(
                body.chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                    .collect(),
            );
            pos += 4 * len;
        }
        if pos != bytes.len() {
            return Err(Error::Data("trailing bytes after signal sequences".into()));
        }
        Ok(SignalDataset::raw(sequences))
    }
}

/// Reads either format; the binary one is recognized by its magic.
pub fn load_signal(path: impl AsRef<Path>) -> Result<SignalDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(SIGNAL_MAGIC) {
        return SignalDataset::from_binary(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
        line: 1,
        msg: "signal file is neither binary nor utf-8 text".into(),
    })?;
    SignalDataset::parse(&text)
}

pub fn save_signal_text(dataset: &SignalDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset.to_text()).map_err(|e| Error::io(path, e))
}

pub fn save_signal_binary(dataset: &SignalDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset.to_binary()).map_err(|e| Error::io(path, e))
}

/// Windows with stride `out_len`, so every sample after the first window is
/// predicted exactly once.
pub fn window_signal(seq: &[f64], in_len: usize, out_len: usize) -> Result<SequenceBatchItem> {
    window_signal_strided(seq, in_len, out_len, out_len)
}

/// Step t (0-based) reads `seq[t·stride .. t·stride + in_len]` and predicts
/// the following `out_len` samples.
pub fn window_signal_strided(
    seq: &[f64],
    in_len: usize,
    out_len: usize,
    stride: usize,
) -> Result<SequenceBatchItem> {
    if in_len == 0 || out_len == 0 || stride == 0 {
        return Err(Error::Param(format!(
            "window lengths and stride must be >= 1 (in {in_len}, out {out_len}, stride {stride})"
        )));
    }
    if seq.len() < in_len + out_len {
        return Err(Error::Data(format!(
            "sequence of length {} is shorter than one window ({in_len} + {out_len})",
            seq.len()
        )));
    }
    let steps = (seq.len() - in_len - out_len) / stride + 1;
    let mut inputs = Vec::with_capacity(steps);
    let mut targets = Vec::with_capacity(steps);
    for t in 0..steps {
        let start = t * stride;
        inputs.push(Vector::from_vec(seq[start..start + in_len].to_vec()));
        targets.push(Vector::from_vec(seq[start + in_len..start + in_len + out_len].to_vec()));
    }
    SequenceBatchItem::new(inputs, targets)
}

/// Sequences of `steps + 1` binary frames whose first `lag + 1` frames are
/// fair coin flips and which then repeat with period `lag + 1`. Under
/// next-step pairing the target at step t > lag equals the input at step t − lag.
pub fn gen_lag_task(
    rng: &mut RngStream,
    num_seq: usize,
    steps: usize,
    lag: usize,
    dim: usize,
) -> Result<PianoRollDataset> {
    if steps <= lag {
        return Err(Error::Param(format!("lag task needs T > lag (T={steps}, lag={lag})")));
    }
    if dim == 0 {
        return Err(Error::Param("lag task dim must be >= 1".into()));
    }
    let period = lag + 1;
    let sequences = (0..num_seq)
        .map(|_| {
            let mut frames: Vec<Vec<usize>> = Vec::with_capacity(steps + 1);
            for j in 0..=steps {
                if j < period {
                    frames.push((0..dim).filter(|_| rng.bernoulli(0.5)).collect());
                } else {
                    frames.push(frames[j - period].clone());
                }
            }
            frames
        })
        .collect();
    PianoRollDataset::new(dim, sequences)
}

/// Sums of random sinusoids plus Gaussian noise at 0.1 of the clean RMS,
/// normalized over the whole dataset. With no tones the signal is unit noise.
pub fn gen_synthetic_signal(
    rng: &mut RngStream,
    num_seq: usize,
    len: usize,
    num_tones: usize,
) -> Result<SignalDataset> {
    if len < DEFAULT_IN_LEN + DEFAULT_OUT_LEN {
        return Err(Error::Param(format!("synthetic signal length must be >= 30, got {len}")));
    }
    if num_seq == 0 {
        return Err(Error::Param("synthetic signal needs at least one sequence".into()));
    }
    let sequences = (0..num_seq)
        .map(|_| {
            let tones: Vec<(f64, f64, f64)> = (0..num_tones)
                .map(|_| {
                    let amp = rng.uniform_range(0.5, 1.5);
                    let freq = rng.uniform_range(0.005, 0.2);
                    let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
                    (amp, freq, phase)
                })
                .collect();
            let clean: Vec<f64> = (0..len)
                .map(|t| {
                    tones
                        .iter()
                        .map(|(a, f, p)| a * (std::f64::consts::TAU * f * t as f64 + p).sin())
                        .sum()
                })
                .collect();
            let noise_std = if num_tones == 0 {
                1.0
            } else {
                0.1 * (clean.iter().map(|x| x * x).sum::<f64>() / len as f64).sqrt()
            };
            clean
                .into_iter()
                .map(|x| x + noise_std * rng.standard_normal())
                .collect()
        })
        .collect();
    SignalDataset::raw(sequences).normalized()
}

/// Index partition into train/valid/test.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Seeded shuffle of `0..len`, cut by largest-remainder rounding of the fractions.
pub fn make_split(len: usize, seed: u64, fractions: (f64, f64, f64)) -> Result<Split> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|&x| !(x > 0.0)) || ((f[0] + f[1] + f[2]) - 1.0).abs() > 1e-9 {
        return Err(Error::Param(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    if len < 3 {
        return Err(Error::Data(format!("cannot split {len} sequences three ways")));
    }
    let quotas: Vec<f64> = f.iter().map(|x| x * len as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = len - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        if sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap();
            sizes[donor] -= 1;
            sizes[i] = 1;
        }
    }

    let mut idx: Vec<usize> = (0..len).collect();
    RngStream::new(seed).shuffle(&mut idx);
    let valid_start = sizes[0];
    let test_start = sizes[0] + sizes[1];
    Ok(Split {
        train: idx[..valid_start].to_vec(),
        valid: idx[valid_start..test_start].to_vec(),
        test: idx[test_start..].to_vec(),
    })
}
