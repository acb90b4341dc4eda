use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{ml_detect, qpsk_demod, qpsk_mod, Constellation};
use crate::channel::{ChannelSpec, SymbolBatch};
use crate::error::{Error, Result};
use crate::numkit::Mat;
use crate::train::random_messages;
use crate::transceiver::{decide, System};

/// Anything that can carry messages over a channel and decide on them.
pub trait Link: Sync {
    fn num_messages(&self) -> usize;

    /// Transmits `messages` over `channel` and returns the hard decisions.
    fn send(&self, messages: &[usize], channel: &ChannelSpec, rng: &mut ChaCha8Rng) -> Result<Vec<usize>>;
}

impl Link for System {
    fn num_messages(&self) -> usize {
        self.arch.num_messages
    }

    fn send(&self, messages: &[usize], channel: &ChannelSpec, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let c = self.constellation()?;
        Ok(decide(&self.probabilities(&c, messages, channel, rng)?))
    }
}

/// Gray-mapped QPSK with per-dimension sign decisions.
#[derive(Debug, Clone, Copy)]
pub struct QpskLink {
    pub n_uses: usize,
}

impl Link for QpskLink {
    fn num_messages(&self) -> usize {
        1 << (2 * self.n_uses)
    }

    fn send(&self, messages: &[usize], channel: &ChannelSpec, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let rows = messages
            .iter()
            .map(|&m| qpsk_mod(m, self.n_uses))
            .collect::<Result<Vec<_>>>()?;
        let y = channel.sample(&SymbolBatch::from_rows(&rows)?, rng, false)?.y;
        y.as_mat().rows_iter().map(|r| qpsk_demod(r, self.n_uses)).collect()
    }
}

/// A fixed constellation with minimum-distance detection.
#[derive(Debug, Clone)]
pub struct MlLink(pub Constellation);

impl Link for MlLink {
    fn num_messages(&self) -> usize {
        self.0.len()
    }

    fn send(&self, messages: &[usize], channel: &ChannelSpec, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        if let Some(&m) = messages.iter().find(|&&m| m >= self.0.len()) {
            return Err(Error::OutOfRange {
                what: "message",
                value: m,
                limit: self.0.len(),
            });
        }
        let x = SymbolBatch::new(self.0.points().select_rows(messages))?;
        let y = channel.sample(&x, rng, false)?.y;
        y.as_mat().rows_iter().map(|r| ml_detect(&self.0, r)).collect()
    }
}

/// Monte-Carlo depth of one error-rate estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub min_blocks: u64,
    pub min_errors: u64,
    /// Hard cap on simulated blocks.
    pub max_blocks: u64,
    /// Blocks per independently seeded chunk.
    pub chunk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            min_blocks: 100_000,
            min_errors: 100,
            max_blocks: 10_000_000,
            chunk: 10_000,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_blocks < 1 || self.chunk < 1 {
            return Err(Error::config("eval", "min_blocks and chunk must be >= 1"));
        }
        if self.max_blocks < self.min_blocks {
            return Err(Error::config("eval.max_blocks", "must be >= min_blocks"));
        }
        Ok(())
    }
}

/// Block error rate at one SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlerPoint {
    pub snr_db: f64,
    pub blocks: u64,
    pub errors: u64,
    pub rate: f64,
    /// Half-width of the 95% Wilson score interval.
    pub ci95: f64,
}

impl BlerPoint {
    pub fn new(snr_db: f64, blocks: u64, errors: u64) -> Self {
        let (lo, hi) = wilson_interval(errors, blocks, 1.959963984540054);
        BlerPoint {
            snr_db,
            blocks,
            errors,
            rate: errors as f64 / blocks.max(1) as f64,
            ci95: 0.5 * (hi - lo),
        }
    }

    /// Wilson interval bounds at 95%.
    pub fn interval(&self) -> (f64, f64) {
        wilson_interval(self.errors, self.blocks, 1.959963984540054)
    }
}

/// Wilson score interval for `k` successes in `n` trials at normal quantile `z`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn chunk_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn run_chunk<L: Link + ?Sized>(link: &L, channel: &ChannelSpec, seed: u64, index: u64, blocks: usize) -> Result<u64> {
    let mut rng = chunk_rng(seed, index);
    let msgs = random_messages(&mut rng, link.num_messages(), blocks);
    let decided = link.send(&msgs, channel, &mut rng)?;
    Ok(msgs.iter().zip(&decided).filter(|(a, b)| a != b).count() as u64)
}

/// Simulates blocks until at least `min_blocks` blocks and `min_errors`
/// errors are collected, or `max_blocks` is hit.
///
/// Work is split into fixed-size chunks with one random stream per chunk
/// index. Chunks run in parallel waves but are merged in index order and
/// the stopping point is the first qualifying chunk index, so the result
/// depends only on `seed`, not on the number of worker threads.
pub fn estimate_bler<L: Link + ?Sized>(
    link: &L,
    channel: &ChannelSpec,
    snr_db: f64,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<BlerPoint> {
    cfg.validate()?;
    let chunk = cfg.chunk as u64;
    let wave = rayon::current_num_threads().max(1) as u64;
    let (mut blocks, mut errors, mut next) = (0u64, 0u64, 0u64);
    loop {
        let indices: Vec<u64> = (next..next + wave).collect();
        let results: Vec<Result<u64>> = indices
            .par_iter()
            .map(|&i| {
                let start = i * chunk;
                if start >= cfg.max_blocks {
                    return Ok(0);
                }
                let n = chunk.min(cfg.max_blocks - start) as usize;
                run_chunk(link, channel, seed, i, n)
            })
            .collect();
        for (&i, r) in indices.iter().zip(results) {
            let start = i * chunk;
            if start >= cfg.max_blocks {
                return Ok(BlerPoint::new(snr_db, blocks, errors));
            }
            errors += r?;
            blocks += chunk.min(cfg.max_blocks - start);
            let done = blocks >= cfg.min_blocks && errors >= cfg.min_errors;
            if done || blocks >= cfg.max_blocks {
                return Ok(BlerPoint::new(snr_db, blocks, errors));
            }
        }
        next += wave;
    }
}

/// One [`BlerPoint`] per SNR, with the noise level recomputed per point.
pub fn snr_sweep<L: Link + ?Sized>(
    link: &L,
    channel: &ChannelSpec,
    snrs: &[f64],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<BlerPoint>> {
    if snrs.is_empty() {
        return Err(Error::Invalid("empty SNR list".into()));
    }
    snrs.iter()
        .map(|&snr| estimate_bler(link, &channel.with_snr_db(snr), snr, cfg, seed))
        .collect()
}

/// CSV with header `snr_db,bler,blocks,errors,ci95`.
pub fn sweep_csv(points: &[BlerPoint]) -> String {
    let mut out = String::from("snr_db,bler,blocks,errors,ci95\n");
    for p in points {
        let _ = writeln!(out, "{},{:e},{},{},{:e}", p.snr_db, p.rate, p.blocks, p.errors, p.ci95);
    }
    out
}

/// Writes the normalized symbols of every message: `M` rows of `2N`
/// comma-separated values, readable by
/// [`load_constellation`](crate::baseline::load_constellation).
pub fn dump_constellation(system: &System, path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, constellation_csv(system.constellation()?.as_mat()))
        .map_err(|e| Error::io(path, e))
}

pub fn constellation_csv(points: &Mat) -> String {
    let mut out = String::new();
    for row in points.rows_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
