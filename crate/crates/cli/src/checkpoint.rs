//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! "DCED"  u32 version  u32 len + rng name  u64 config hash  u64 seed
//! u32 base size  5 x u32 channels  u32 levels  levels x f64 thresholds
//! f64 final threshold
//! u32 size  u32 wiener window  f64 low pct  f64 high pct  u32 mask threshold
//! per level: u32 input channels  u32 block count
//!   per block: u32 kind  u32 rank  rank x u32 dims  f32 values
//! ```

use std::path::Path;

use thiserror::Error;

use dced_core::net::{Level, MultiLevelNet, NetConfig, POOLS};
use dced_core::preprocess::PreprocessConfig;
use dced_core::RNG_ALGORITHM;

pub const MAGIC: &[u8; 4] = b"DCED";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated in {block}")]
    Truncated { block: String },
    #[error("checkpoint config hash {found:016x} does not match the loading config ({expected:016x})")]
    ConfigHashMismatch { found: u64, expected: u64 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum BlockKind {
    ConvWeight = 1,
    ConvBias = 2,
    Gamma = 3,
    Beta = 4,
    RunningMean = 5,
    RunningVar = 6,
    UpWeight = 7,
    UpBias = 8,
}

impl BlockKind {
    fn name(self) -> &'static str {
        match self {
            BlockKind::ConvWeight => "conv weight",
            BlockKind::ConvBias => "conv bias",
            BlockKind::Gamma => "batchnorm gamma",
            BlockKind::Beta => "batchnorm beta",
            BlockKind::RunningMean => "batchnorm running mean",
            BlockKind::RunningVar => "batchnorm running variance",
            BlockKind::UpWeight => "transpose conv weight",
            BlockKind::UpBias => "transpose conv bias",
        }
    }
}

/// A trained network plus the preprocessing it expects.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: MultiLevelNet,
    pub preprocess: PreprocessConfig,
}

type Block<'a> = (BlockKind, Vec<usize>, &'a [f32]);
type BlockMut<'a> = (BlockKind, Vec<usize>, &'a mut [f32]);

/// Every stored array of a level, in file order.
fn level_blocks(level: &Level) -> Vec<Block<'_>> {
    use BlockKind::*;
    let mut out: Vec<Block<'_>> = Vec::new();
    for e in &level.encoder {
        let n = e.norm.gamma.len();
        out.push((ConvWeight, e.conv.weight.shape().dims().to_vec(), e.conv.weight.data()));
        out.push((ConvBias, vec![e.conv.bias.len()], &e.conv.bias));
        out.push((Gamma, vec![n], &e.norm.gamma));
        out.push((Beta, vec![n], &e.norm.beta));
        out.push((RunningMean, vec![n], &e.norm.running_mean));
        out.push((RunningVar, vec![n], &e.norm.running_var));
    }
    for d in &level.decoder {
        let n = d.norm.gamma.len();
        out.push((UpWeight, d.up.weight.shape().dims().to_vec(), d.up.weight.data()));
        out.push((UpBias, vec![d.up.bias.len()], &d.up.bias));
        out.push((ConvWeight, d.conv.weight.shape().dims().to_vec(), d.conv.weight.data()));
        out.push((ConvBias, vec![d.conv.bias.len()], &d.conv.bias));
        out.push((Gamma, vec![n], &d.norm.gamma));
        out.push((Beta, vec![n], &d.norm.beta));
        out.push((RunningMean, vec![n], &d.norm.running_mean));
        out.push((RunningVar, vec![n], &d.norm.running_var));
    }
    out.push((
        ConvWeight,
        level.head.weight.shape().dims().to_vec(),
        level.head.weight.data(),
    ));
    out.push((ConvBias, vec![level.head.bias.len()], &level.head.bias));
    out
}

fn level_blocks_mut(level: &mut Level) -> Vec<BlockMut<'_>> {
    use BlockKind::*;
    let mut out: Vec<BlockMut<'_>> = Vec::new();
    for e in &mut level.encoder {
        let n = e.norm.gamma.len();
        let dims = e.conv.weight.shape().dims().to_vec();
        out.push((ConvWeight, dims, e.conv.weight.data_mut()));
        out.push((ConvBias, vec![e.conv.bias.len()], &mut e.conv.bias));
        out.push((Gamma, vec![n], &mut e.norm.gamma));
        out.push((Beta, vec![n], &mut e.norm.beta));
        out.push((RunningMean, vec![n], &mut e.norm.running_mean));
        out.push((RunningVar, vec![n], &mut e.norm.running_var));
    }
    for d in &mut level.decoder {
        let n = d.norm.gamma.len();
        let up = d.up.weight.shape().dims().to_vec();
        let conv = d.conv.weight.shape().dims().to_vec();
        out.push((UpWeight, up, d.up.weight.data_mut()));
        out.push((UpBias, vec![d.up.bias.len()], &mut d.up.bias));
        out.push((ConvWeight, conv, d.conv.weight.data_mut()));
        out.push((ConvBias, vec![d.conv.bias.len()], &mut d.conv.bias));
        out.push((Gamma, vec![n], &mut d.norm.gamma));
        out.push((Beta, vec![n], &mut d.norm.beta));
        out.push((RunningMean, vec![n], &mut d.norm.running_mean));
        out.push((RunningVar, vec![n], &mut d.norm.running_var));
    }
    let head = level.head.weight.shape().dims().to_vec();
    out.push((ConvWeight, head, level.head.weight.data_mut()));
    out.push((ConvBias, vec![level.head.bias.len()], &mut level.head.bias));
    out
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, v: usize) {
    put_u32(out, u32::try_from(v).expect("dimension fits in 32 bits"));
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let net = &ckpt.net;
    let cfg = &net.config;
    let pre = &ckpt.preprocess;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_len(&mut out, RNG_ALGORITHM.len());
    out.extend_from_slice(RNG_ALGORITHM.as_bytes());
    out.extend_from_slice(&net.provenance.config_hash.to_le_bytes());
    out.extend_from_slice(&net.provenance.seed.to_le_bytes());
    put_len(&mut out, cfg.base_size);
    for &c in &cfg.channels {
        put_len(&mut out, c);
    }
    put_len(&mut out, net.levels.len());
    for level in &net.levels {
        out.extend_from_slice(&level.threshold.to_le_bytes());
    }
    out.extend_from_slice(&cfg.final_threshold.to_le_bytes());
    put_len(&mut out, pre.size);
    put_len(&mut out, pre.wiener_window);
    out.extend_from_slice(&pre.low_percentile.to_le_bytes());
    out.extend_from_slice(&pre.high_percentile.to_le_bytes());
    put_u32(&mut out, pre.mask_threshold as u32);
    for level in &net.levels {
        put_len(&mut out, level.input_channels);
        let blocks = level_blocks(level);
        put_len(&mut out, blocks.len());
        for (kind, dims, data) in blocks {
            put_u32(&mut out, kind as u32);
            put_len(&mut out, dims.len());
            for d in dims {
                put_len(&mut out, d);
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, block: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                block: block.to_string(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, block: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, block)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self, block: &str) -> Result<usize, CheckpointError> {
        Ok(self.u32(block)? as usize)
    }

    fn u64(&mut self, block: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, block)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, block: &str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, block)?.try_into().expect("8 bytes")))
    }
}

/// Decodes a checkpoint. When `expected_hash` is given the stored config
/// hash must match it.
pub fn decode(bytes: &[u8], expected_hash: Option<u64>) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "header").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("header")?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let name_len = r.usize("header")?;
    let name = r.take(name_len, "header")?;
    if name != RNG_ALGORITHM.as_bytes() {
        return Err(CheckpointError::Malformed(format!(
            "written with generator {:?}, expected {RNG_ALGORITHM:?}",
            String::from_utf8_lossy(name)
        )));
    }
    let config_hash = r.u64("header")?;
    if let Some(expected) = expected_hash {
        if expected != config_hash {
            return Err(CheckpointError::ConfigHashMismatch {
                found: config_hash,
                expected,
            });
        }
    }
    let seed = r.u64("header")?;
    let base_size = r.usize("header")?;
    let mut channels = [0usize; POOLS];
    for c in &mut channels {
        *c = r.usize("header")?;
    }
    let levels = r.usize("header")?;
    if levels == 0 || levels > 64 {
        return Err(CheckpointError::Malformed(format!("implausible level count {levels}")));
    }
    let thresholds = (0..levels).map(|_| r.f64("header")).collect::<Result<Vec<_>, _>>()?;
    let final_threshold = r.f64("header")?;
    let preprocess = PreprocessConfig {
        size: r.usize("header")?,
        wiener_window: r.usize("header")?,
        low_percentile: r.f64("header")?,
        high_percentile: r.f64("header")?,
        mask_threshold: u8::try_from(r.u32("header")?)
            .map_err(|_| CheckpointError::Malformed("mask threshold above 255".into()))?,
    };
    preprocess
        .validate()
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;

    let config = NetConfig {
        base_size,
        channels,
        thresholds,
        final_threshold,
    };
    // builds the right structure; every value is overwritten below
    let mut net = MultiLevelNet::new(config, seed).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    net.provenance.config_hash = config_hash;

    for (li, level) in net.levels.iter_mut().enumerate() {
        let where_ = |what: &str| format!("level {} {what}", li + 1);
        let input_channels = r.usize(&where_("header"))?;
        if input_channels != level.input_channels {
            return Err(CheckpointError::Malformed(format!(
                "level {} has {input_channels} input channels, expected {}",
                li + 1,
                level.input_channels
            )));
        }
        let count = r.usize(&where_("header"))?;
        let mut blocks = level_blocks_mut(level);
        if count != blocks.len() {
            return Err(CheckpointError::Malformed(format!(
                "level {} has {count} blocks, expected {}",
                li + 1,
                blocks.len()
            )));
        }
        for (bi, (kind, dims, data)) in blocks.iter_mut().enumerate() {
            let label = where_(&format!("block {} ({})", bi + 1, kind.name()));
            let found = r.u32(&label)?;
            if found != *kind as u32 {
                return Err(CheckpointError::Malformed(format!(
                    "{label}: kind tag {found}, expected {}",
                    *kind as u32
                )));
            }
            let rank = r.usize(&label)?;
            if rank != dims.len() {
                return Err(CheckpointError::Malformed(format!(
                    "{label}: rank {rank}, expected {}",
                    dims.len()
                )));
            }
            for &d in dims.iter() {
                let got = r.usize(&label)?;
                if got != d {
                    return Err(CheckpointError::Malformed(format!(
                        "{label}: dims differ ({got} vs {d})"
                    )));
                }
            }
            let raw = r.take(data.len() * 4, &label)?;
            for (v, chunk) in data.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes after the last level",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint { net, preprocess })
}

pub fn load(path: &Path, expected_hash: Option<u64>) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    decode(&bytes, expected_hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::config_hash;
    use dced_core::net::NetConfig;

    fn sample() -> Checkpoint {
        let config = NetConfig {
            base_size: 32,
            channels: [4, 6, 8, 12, 16],
            thresholds: vec![0.5, 0.8],
            final_threshold: 0.8,
        };
        let preprocess = PreprocessConfig {
            size: 32,
            ..PreprocessConfig::default()
        };
        let mut net = MultiLevelNet::new(config.clone(), 42).unwrap();
        net.provenance.config_hash = config_hash(&config, &preprocess);
        // make running statistics distinguishable from their defaults
        for (i, e) in net.levels[1].encoder.iter_mut().enumerate() {
            e.norm.running_mean.iter_mut().for_each(|v| *v = 0.25 * i as f32);
            e.norm.running_var.iter_mut().for_each(|v| *v = 1.5 + i as f32);
        }
        Checkpoint { net, preprocess }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let bytes = encode(&c);
        let back = decode(&bytes, Some(c.net.provenance.config_hash)).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode(&back), bytes);
        assert_eq!(back.net.levels.len(), 2);
    }

    #[test]
    fn distinct_load_errors() {
        let bytes = encode(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, None), Err(CheckpointError::BadMagic)));
        assert!(matches!(decode(b"DC", None), Err(CheckpointError::BadMagic)));

        let mut future = bytes.clone();
        future[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode(&future, None),
            Err(CheckpointError::VersionMismatch { found: 2, expected: 1 })
        ));

        match decode(&bytes[..bytes.len() - 10], None) {
            Err(CheckpointError::Truncated { block }) => {
                assert!(block.contains("level 2") && block.contains("conv bias"), "{block}")
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            decode(&bytes, Some(1)),
            Err(CheckpointError::ConfigHashMismatch { expected: 1, .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long, None), Err(CheckpointError::Malformed(_))));
    }
}
