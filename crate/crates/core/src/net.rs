//! Encoder-decoder levels and their composition into a multi-level network.
//!
//! One level maps an `(n, c_in, S, S)` image to an `(n, 1, S, S)` probability
//! map. The encoder has five pools. Pool `k` convolves its input down to
//! `C_k - c_in` channels, normalizes, rectifies and average-pools, then
//! appends the average-pooled input so its output carries exactly `C_k`
//! channels at half the resolution. The decoder mirrors this: each step
//! upsamples with a stride-2 transpose convolution, concatenates the encoder
//! output of the same resolution, and convolves back down. The last step
//! reaches full resolution and concatenates the level input itself; a
//! single-channel convolution head and a logistic squash finish the map.

use crate::error::{Error, Result};
use crate::layers::{
    batchnorm_forward, conv2d, dropout, pool2x2, relu, sigmoid, transpose_conv2d, BatchNormCache, BatchNormParams,
    ConvCache, ConvParams, DropoutCache, DropoutSpec, Mode, PoolCache, PoolMode, ReluCache, SigmoidCache,
    TransposeConvCache,
};
use crate::tensor::{Rng, Tensor};

pub const POOLS: usize = 5;
pub const FULL_CHANNELS: [usize; POOLS] = [32, 64, 128, 256, 512];
pub const DEFAULT_BASE_SIZE: usize = 320;
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.50, 0.80, 0.95];
pub const FIRST_LEVEL_CHANNELS: usize = 3;
pub const ENCODER_DROPOUT: [f32; POOLS] = [0.0, 0.0, 0.0, 0.2, 0.2];
pub const DECODER_DROPOUT: [f32; POOLS] = [0.2, 0.2, 0.0, 0.0, 0.0];

/// Network geometry and per-level thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub base_size: usize,
    pub channels: [usize; POOLS],
    pub thresholds: Vec<f64>,
    pub final_threshold: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            base_size: DEFAULT_BASE_SIZE,
            channels: FULL_CHANNELS,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            final_threshold: DEFAULT_THRESHOLDS[2],
        }
    }
}

impl NetConfig {
    /// Channel widths `32, 64, 128, 256, 512` scaled by `multiplier`.
    pub fn channels_for_width(multiplier: f64) -> Result<[usize; POOLS]> {
        if !(multiplier.is_finite() && multiplier > 0.0) {
            return Err(Error::invalid(format!(
                "width multiplier must be positive, got {multiplier}"
            )));
        }
        let mut out = [0; POOLS];
        for (o, c) in out.iter_mut().zip(FULL_CHANNELS) {
            *o = (c as f64 * multiplier).round() as usize;
        }
        Ok(out)
    }

    pub fn levels(&self) -> usize {
        self.thresholds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_size < 32 || !self.base_size.is_multiple_of(32) {
            return Err(Error::invalid(format!(
                "base size must be a positive multiple of 32, got {}",
                self.base_size
            )));
        }
        let mut prev = FIRST_LEVEL_CHANNELS;
        for (k, &c) in self.channels.iter().enumerate() {
            if c <= prev {
                return Err(Error::invalid(format!(
                    "pool {} needs more than {prev} channels, got {c}",
                    k + 1
                )));
            }
            prev = c;
        }
        if self.thresholds.is_empty() {
            return Err(Error::invalid("at least one level is required"));
        }
        for &t in &self.thresholds {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid(format!("threshold {t} outside (0, 1]")));
            }
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "thresholds must be strictly increasing, got {:?}",
                self.thresholds
            )));
        }
        if !(self.final_threshold > 0.0 && self.final_threshold <= 1.0) {
            return Err(Error::invalid(format!(
                "final threshold {} outside (0, 1]",
                self.final_threshold
            )));
        }
        Ok(())
    }

    pub fn input_channels(&self, level: usize) -> usize {
        if level == 0 {
            FIRST_LEVEL_CHANNELS
        } else {
            1
        }
    }

    /// Channels produced by the full-resolution decoder step.
    pub fn head_channels(&self) -> usize {
        (self.channels[0] / 2).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock {
    pub conv: ConvParams,
    pub norm: BatchNormParams,
    pub dropout: DropoutSpec,
}

impl EncoderBlock {
    pub fn in_channels(&self) -> usize {
        self.conv.c_in()
    }

    pub fn out_channels(&self) -> usize {
        self.conv.c_out() + self.conv.c_in()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderBlock {
    pub up: ConvParams,
    pub conv: ConvParams,
    pub norm: BatchNormParams,
    pub dropout: DropoutSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub input_channels: usize,
    pub threshold: f64,
    pub encoder: Vec<EncoderBlock>,
    pub decoder: Vec<DecoderBlock>,
    pub head: ConvParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GateDecision {
    Advance,
    Repeat,
}

impl std::fmt::Display for GateDecision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GateDecision::Advance => "advance",
            GateDecision::Repeat => "repeat",
        })
    }
}

pub fn gate_decision(c_o: f64, t_o: f64) -> GateDecision {
    if c_o >= t_o {
        GateDecision::Advance
    } else {
        GateDecision::Repeat
    }
}

/// Pixel accuracy of `pred >= 0.5` against a binary truth map, averaged
/// over the batch.
pub fn compute_gate(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(format!(
            "gate compares {} against {}",
            pred.shape(),
            truth.shape()
        )));
    }
    let s = pred.shape();
    let per_item = s.c * s.plane();
    let mut total = 0.0;
    for n in 0..s.n {
        let agree = pred
            .item(n)
            .iter()
            .zip(truth.item(n))
            .filter(|(&p, &t)| (p >= 0.5) == (t >= 0.5))
            .count();
        total += agree as f64 / per_item as f64;
    }
    Ok(total / s.n as f64)
}

struct EncoderTape {
    conv: ConvCache,
    norm: BatchNormCache,
    relu: ReluCache,
    pool: PoolCache,
    skip_pool: PoolCache,
    dropout: DropoutCache,
    branch: usize,
}

struct DecoderTape {
    up: TransposeConvCache,
    conv: ConvCache,
    norm: BatchNormCache,
    relu: ReluCache,
    dropout: DropoutCache,
    up_channels: usize,
}

/// Everything a level's backward pass needs, recorded by a forward pass.
pub struct LevelTape {
    encoder: Vec<EncoderTape>,
    decoder: Vec<DecoderTape>,
    head: ConvCache,
    sigmoid: SigmoidCache,
}

/// Gradients in `Level::visit_params` order.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelGrads(pub Vec<Vec<f32>>);

/// Intermediate tensors of an encoder pass, for shape inspection.
pub struct EncoderOutput {
    pub code: Tensor,
    pub skips: Vec<Tensor>,
}

impl Level {
    pub fn new(rng: &mut Rng, config: &NetConfig, level: usize, threshold: f64) -> Result<Self> {
        let input_channels = config.input_channels(level);
        let ch = config.channels;
        let mut encoder = Vec::with_capacity(POOLS);
        let mut prev = input_channels;
        for k in 0..POOLS {
            if ch[k] <= prev {
                return Err(Error::invalid(format!(
                    "pool {} needs more than {prev} channels, got {}",
                    k + 1,
                    ch[k]
                )));
            }
            encoder.push(EncoderBlock {
                conv: ConvParams::he_normal(rng, ch[k] - prev, prev)?,
                norm: BatchNormParams::new(ch[k] - prev),
                dropout: DropoutSpec::new(ENCODER_DROPOUT[k])?,
            });
            prev = ch[k];
        }
        let mut decoder = Vec::with_capacity(POOLS);
        for j in 0..POOLS {
            let from = ch[POOLS - 1 - j];
            let (to, skip) = if j + 1 < POOLS {
                (ch[POOLS - 2 - j], ch[POOLS - 2 - j])
            } else {
                (config.head_channels(), input_channels)
            };
            decoder.push(DecoderBlock {
                up: ConvParams::he_normal(rng, to, from)?,
                conv: ConvParams::he_normal(rng, to, to + skip)?,
                norm: BatchNormParams::new(to),
                dropout: DropoutSpec::new(DECODER_DROPOUT[j])?,
            });
        }
        let head = ConvParams::he_normal(rng, 1, config.head_channels())?;
        Ok(Level {
            input_channels,
            threshold,
            encoder,
            decoder,
            head,
        })
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let s = input.shape();
        if s.c != self.input_channels {
            return Err(Error::shape(format!(
                "level expects {} input channels, got {s}",
                self.input_channels
            )));
        }
        let div = 1 << POOLS;
        if !s.h.is_multiple_of(div) || !s.w.is_multiple_of(div) {
            return Err(Error::shape(format!(
                "spatial size must be divisible by {div}, got {s}"
            )));
        }
        Ok(())
    }

    /// Runs the encoder; skips hold each pool's output, deepest last.
    pub fn encoder_forward(&self, input: &Tensor, mode: Mode, rng: &mut Rng) -> Result<EncoderOutput> {
        self.check_input(input)?;
        let mut skips = Vec::with_capacity(POOLS);
        let mut x = input.clone();
        for block in &self.encoder {
            let (y, _) = encoder_step(block, &x, mode, rng)?;
            skips.push(y.clone());
            x = y;
        }
        Ok(EncoderOutput { code: x, skips })
    }

    /// Full forward pass, recording a tape for `LevelTape::backward`.
    ///
    /// Running statistics are left untouched; pass the tape to
    /// `absorb_statistics` to fold in the batch statistics of a training pass.
    pub fn forward(&self, input: &Tensor, mode: Mode, rng: &mut Rng) -> Result<(Tensor, LevelTape)> {
        self.check_input(input)?;
        let mut outs: Vec<Tensor> = Vec::with_capacity(POOLS);
        let mut enc_tapes = Vec::with_capacity(POOLS);
        for (k, block) in self.encoder.iter().enumerate() {
            let src = if k == 0 { input } else { &outs[k - 1] };
            let (y, tape) = encoder_step(block, src, mode, rng)?;
            outs.push(y);
            enc_tapes.push(tape);
        }
        let mut dec_tapes = Vec::with_capacity(POOLS);
        let mut x = outs[POOLS - 1].clone();
        for (j, block) in self.decoder.iter().enumerate() {
            let skip = if j + 1 < POOLS { &outs[POOLS - 2 - j] } else { input };
            let (y, tape) = decoder_step(block, &x, skip, mode, rng)?;
            dec_tapes.push(tape);
            x = y;
        }
        let (logits, head) = conv2d(&x, &self.head)?;
        let (prob, sig) = sigmoid(&logits);
        Ok((
            prob,
            LevelTape {
                encoder: enc_tapes,
                decoder: dec_tapes,
                head,
                sigmoid: sig,
            },
        ))
    }

    /// Inference-mode forward pass.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        // inference never draws from the generator
        let mut rng = Rng::seeded(0);
        Ok(self.forward(input, Mode::Inference, &mut rng)?.0)
    }

    pub fn absorb_statistics(&mut self, tape: &LevelTape) {
        for (block, t) in self.encoder.iter_mut().zip(&tape.encoder) {
            if let Some(stats) = t.norm.stats() {
                block.norm.absorb(stats);
            }
        }
        for (block, t) in self.decoder.iter_mut().zip(&tape.decoder) {
            if let Some(stats) = t.norm.stats() {
                block.norm.absorb(stats);
            }
        }
    }

    /// Trainable parameter slices: per encoder pool
    /// `[conv.w, conv.b, gamma, beta]`, per decoder step
    /// `[up.w, up.b, conv.w, conv.b, gamma, beta]`, then `[head.w, head.b]`.
    pub fn visit_params(&self) -> Vec<&[f32]> {
        let mut v: Vec<&[f32]> = Vec::new();
        for b in &self.encoder {
            v.extend([
                b.conv.weight.data(),
                &b.conv.bias[..],
                &b.norm.gamma[..],
                &b.norm.beta[..],
            ]);
        }
        for b in &self.decoder {
            v.extend([
                b.up.weight.data(),
                &b.up.bias[..],
                b.conv.weight.data(),
                &b.conv.bias[..],
                &b.norm.gamma[..],
                &b.norm.beta[..],
            ]);
        }
        v.extend([self.head.weight.data(), &self.head.bias[..]]);
        v
    }

    pub fn visit_params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut v: Vec<&mut [f32]> = Vec::new();
        for b in &mut self.encoder {
            v.push(b.conv.weight.data_mut());
            v.push(&mut b.conv.bias[..]);
            v.push(&mut b.norm.gamma[..]);
            v.push(&mut b.norm.beta[..]);
        }
        for b in &mut self.decoder {
            v.push(b.up.weight.data_mut());
            v.push(&mut b.up.bias[..]);
            v.push(b.conv.weight.data_mut());
            v.push(&mut b.conv.bias[..]);
            v.push(&mut b.norm.gamma[..]);
            v.push(&mut b.norm.beta[..]);
        }
        v.push(self.head.weight.data_mut());
        v.push(&mut self.head.bias[..]);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.visit_params().iter().map(|p| p.len()).sum()
    }
}

fn encoder_step(block: &EncoderBlock, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<(Tensor, EncoderTape)> {
    let (a, conv) = conv2d(x, &block.conv)?;
    let (b, norm) = batchnorm_forward(&a, &block.norm, mode)?;
    let (c, relu) = relu(&b);
    let (d, pool) = pool2x2(&c, PoolMode::Average)?;
    let (e, skip_pool) = pool2x2(x, PoolMode::Average)?;
    let cat = d.concat_channels(&e)?;
    let (y, dropout) = dropout(&cat, block.dropout, mode, rng)?;
    Ok((
        y,
        EncoderTape {
            conv,
            norm,
            relu,
            pool,
            skip_pool,
            dropout,
            branch: block.conv.c_out(),
        },
    ))
}

fn decoder_step(
    block: &DecoderBlock,
    x: &Tensor,
    skip: &Tensor,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor, DecoderTape)> {
    let (u, up) = transpose_conv2d(x, &block.up)?;
    if u.shape().with_channels(skip.shape().c)? != skip.shape() {
        return Err(Error::shape(format!(
            "decoder skip {} does not match upsampled {}",
            skip.shape(),
            u.shape()
        )));
    }
    let cat = u.concat_channels(skip)?;
    let (a, conv) = conv2d(&cat, &block.conv)?;
    let (b, norm) = batchnorm_forward(&a, &block.norm, mode)?;
    let (c, relu) = relu(&b);
    let (y, dropout) = dropout(&c, block.dropout, mode, rng)?;
    Ok((
        y,
        DecoderTape {
            up,
            conv,
            norm,
            relu,
            dropout,
            up_channels: block.up.c_out(),
        },
    ))
}

impl LevelTape {
    /// Gradients of the loss with respect to every trainable parameter,
    /// given the loss gradient at the probability map.
    pub fn backward(self, grad_out: &Tensor) -> Result<LevelGrads> {
        let g = self.sigmoid.backward(grad_out)?;
        let (mut g, head) = self.head.backward(&g)?;

        let mut dec_grads: Vec<Vec<Vec<f32>>> = Vec::with_capacity(POOLS);
        let mut skip_grads: Vec<Tensor> = Vec::with_capacity(POOLS);
        for tape in self.decoder.into_iter().rev() {
            let t = tape.dropout.backward(&g)?;
            let t = tape.relu.backward(&t)?;
            let (t, norm) = tape.norm.backward(&t)?;
            let (t, conv) = tape.conv.backward(&t)?;
            let (g_up, g_skip) = t.split_channels(tape.up_channels)?;
            let (g_prev, up) = tape.up.backward(&g_up)?;
            dec_grads.push(vec![
                up.weight.into_vec(),
                up.bias,
                conv.weight.into_vec(),
                conv.bias,
                norm.gamma,
                norm.beta,
            ]);
            skip_grads.push(g_skip);
            g = g_prev;
        }
        dec_grads.reverse();
        // skip_grads[0] belongs to the level input; skip_grads[j] for j >= 1
        // is the gradient reaching encoder output j - 1.
        let mut enc_grads: Vec<Vec<Vec<f32>>> = Vec::with_capacity(POOLS);
        let n_enc = self.encoder.len();
        for (k, tape) in self.encoder.into_iter().enumerate().rev() {
            if k + 1 < n_enc {
                g.add_assign(&skip_grads[k + 1])?;
            }
            let t = tape.dropout.backward(&g)?;
            let (g_branch, g_skip) = t.split_channels(tape.branch)?;
            let b = tape.pool.backward(&g_branch)?;
            let b = tape.relu.backward(&b)?;
            let (b, norm) = tape.norm.backward(&b)?;
            let (mut gx, conv) = if k == 0 {
                tape.conv.backward_params_only(&b)?
            } else {
                tape.conv.backward(&b)?
            };
            if k > 0 {
                gx.add_assign(&tape.skip_pool.backward(&g_skip)?)?;
            }
            enc_grads.push(vec![conv.weight.into_vec(), conv.bias, norm.gamma, norm.beta]);
            g = gx;
        }
        enc_grads.reverse();

        let mut out: Vec<Vec<f32>> = enc_grads.into_iter().flatten().collect();
        out.extend(dec_grads.into_iter().flatten());
        out.push(head.weight.into_vec());
        out.push(head.bias);
        Ok(LevelGrads(out))
    }
}

/// Training provenance carried alongside the parameters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiLevelNet {
    pub config: NetConfig,
    pub levels: Vec<Level>,
    pub provenance: Provenance,
}

impl MultiLevelNet {
    /// Freshly initialized network: He-normal convolutions, unit gamma,
    /// zero beta, drawn from a generator seeded with `seed`.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seeded(seed);
        let levels = config
            .thresholds
            .iter()
            .enumerate()
            .map(|(i, &t)| Level::new(&mut rng, &config, i, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiLevelNet {
            config,
            levels,
            provenance: Provenance { seed, config_hash: 0 },
        })
    }

    /// Straight pipeline of every level in inference mode.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        self.forward_through(image, self.levels.len())
    }

    /// Output of the first `count` levels.
    pub fn forward_through(&self, image: &Tensor, count: usize) -> Result<Tensor> {
        let mut x = image.clone();
        for level in &self.levels[..count.min(self.levels.len())] {
            x = level.infer(&x)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn small_config() -> NetConfig {
        NetConfig {
            base_size: 32,
            channels: [4, 6, 8, 12, 16],
            thresholds: vec![0.5],
            final_threshold: 0.5,
        }
    }

    #[test]
    fn gate_examples() {
        assert_eq!(gate_decision(0.6, 0.5), GateDecision::Advance);
        assert_eq!(gate_decision(0.7, 0.8), GateDecision::Repeat);
        assert_eq!(gate_decision(0.8, 0.8), GateDecision::Advance);
    }

    #[test]
    fn compute_gate_examples() {
        let truth = Tensor::from_vec(
            Shape::new(1, 1, 16, 16).unwrap(),
            (0..256).map(|i| (i % 3 == 0) as u8 as f32).collect(),
        )
        .unwrap();
        assert_eq!(compute_gate(&truth, &truth).unwrap(), 1.0);
        let inverse = truth.map(|v| 1.0 - v);
        assert_eq!(compute_gate(&inverse, &truth).unwrap(), 0.0);
        // flip the first 64 pixels
        let mut partial = truth.clone();
        for v in &mut partial.data_mut()[..64] {
            *v = 1.0 - *v;
        }
        assert_eq!(compute_gate(&partial, &truth).unwrap(), 0.75);
    }

    #[test]
    fn compute_gate_shape_mismatch() {
        let a = Tensor::zeros(Shape::new(1, 1, 4, 4).unwrap());
        let b = Tensor::zeros(Shape::new(1, 1, 4, 8).unwrap());
        assert!(compute_gate(&a, &b).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(NetConfig::default().validate().is_ok());
        let mut c = small_config();
        c.base_size = 48;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.thresholds = vec![0.8, 0.5];
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.thresholds.clear();
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.channels = [3, 6, 8, 12, 16];
        assert!(c.validate().is_err());
    }

    #[test]
    fn width_multiplier() {
        assert_eq!(NetConfig::channels_for_width(1.0).unwrap(), FULL_CHANNELS);
        assert_eq!(NetConfig::channels_for_width(0.25).unwrap(), [8, 16, 32, 64, 128]);
        assert!(NetConfig::channels_for_width(0.0).is_err());
    }

    #[test]
    fn dropout_placement() {
        let net = MultiLevelNet::new(small_config(), 1).unwrap();
        let level = &net.levels[0];
        let enc: Vec<f32> = level.encoder.iter().map(|b| b.dropout.rate).collect();
        let dec: Vec<f32> = level.decoder.iter().map(|b| b.dropout.rate).collect();
        assert_eq!(enc, ENCODER_DROPOUT);
        assert_eq!(dec, DECODER_DROPOUT);
    }

    #[test]
    fn reduced_shapes() {
        let config = NetConfig {
            base_size: 64,
            channels: [8, 12, 16, 24, 32],
            thresholds: vec![0.5],
            final_threshold: 0.5,
        };
        let net = MultiLevelNet::new(config, 3).unwrap();
        let x = Tensor::randn(&mut Rng::seeded(1), (1, 3, 64, 64), 1.0).unwrap();
        let y = net.levels[0].infer(&x).unwrap();
        assert_eq!(y.shape().dims(), [1, 1, 64, 64]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn inference_is_deterministic() {
        let net = MultiLevelNet::new(small_config(), 5).unwrap();
        let x = Tensor::randn(&mut Rng::seeded(2), (2, 3, 32, 32), 1.0).unwrap();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.shape().dims(), [2, 1, 32, 32]);
    }

    #[test]
    fn wrong_input_rejected() {
        let net = MultiLevelNet::new(small_config(), 5).unwrap();
        let bad_c = Tensor::zeros(Shape::new(1, 1, 32, 32).unwrap());
        assert!(net.forward(&bad_c).is_err());
        let bad_hw = Tensor::zeros(Shape::new(1, 3, 48, 48).unwrap());
        assert!(net.forward(&bad_hw).is_err());
    }

    #[test]
    fn grads_match_parameter_layout() {
        let mut net = MultiLevelNet::new(small_config(), 9).unwrap();
        let x = Tensor::randn(&mut Rng::seeded(3), (2, 3, 32, 32), 1.0).unwrap();
        let level = &mut net.levels[0];
        let (y, tape) = level.forward(&x, Mode::Training, &mut Rng::seeded(4)).unwrap();
        level.absorb_statistics(&tape);
        let grads = tape.backward(&Tensor::full(y.shape(), 1.0)).unwrap();
        let params = level.visit_params();
        assert_eq!(grads.0.len(), params.len());
        for (g, p) in grads.0.iter().zip(&params) {
            assert_eq!(g.len(), p.len());
        }
        assert_eq!(params.len(), POOLS * 4 + POOLS * 6 + 2);
        assert_ne!(level.encoder[0].norm.running_mean, vec![0.0; 1]);
    }
}
