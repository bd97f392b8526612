//! Convolutional discriminator.
//!
//! A trajectory segment enters as three standardized channels (r, theta, z)
//! with time along the convolution axis. Three valid conv1d stages with ELU
//! activations and train-mode dropout feed a dense sigmoid head that scores
//! the probability the segment is real. The backward pass reaches both the
//! weights and the input coordinates, so generator gradients can flow
//! through a discriminator evaluation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::generator::{CoordNode, NormNodes};
use crate::param::Parameter;
use crate::tape::{Activation, Mode, NodeId, Tape};
use crate::tensor::Tensor;
use crate::trajectory::{NormStats, Trajectory};

/// One convolution stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub channels_out: usize,
    pub width: usize,
    pub stride: usize,
}

/// Discriminator topology for a fixed segment length.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub segment_len: usize,
    pub conv: [ConvSpec; 3],
    pub dropout_rate: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            segment_len: 100,
            conv: [
                ConvSpec { channels_out: 16, width: 5, stride: 2 },
                ConvSpec { channels_out: 32, width: 5, stride: 2 },
                ConvSpec { channels_out: 64, width: 3, stride: 2 },
            ],
            dropout_rate: 0.5,
        }
    }
}

impl DiscriminatorConfig {
    /// Feature length after each conv stage; errors if any stage collapses.
    pub fn feature_lens(&self) -> Result<[usize; 3]> {
        let mut len = self.segment_len;
        let mut out = [0usize; 3];
        for (i, spec) in self.conv.iter().enumerate() {
            if spec.stride == 0 || spec.channels_out == 0 || spec.width == 0 {
                return Err(Error::invalid(
                    "DiscriminatorConfig",
                    format!("conv stage {} has a zero extent: {spec:?}", i + 1),
                ));
            }
            if spec.width > len {
                return Err(Error::invalid(
                    "DiscriminatorConfig",
                    format!(
                        "conv stage {} width {} exceeds incoming length {len}",
                        i + 1,
                        spec.width
                    ),
                ));
            }
            len = (len - spec.width) / spec.stride + 1;
            out[i] = len;
        }
        Ok(out)
    }

    /// Flattened feature count entering the dense head.
    pub fn flat_features(&self) -> Result<usize> {
        let lens = self.feature_lens()?;
        Ok(self.conv[2].channels_out * lens[2])
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(
                "DiscriminatorConfig",
                format!("dropout rate must be in [0, 1), got {}", self.dropout_rate),
            ));
        }
        self.feature_lens()?;
        Ok(())
    }

    fn channels_in(&self, stage: usize) -> usize {
        if stage == 0 {
            3
        } else {
            self.conv[stage - 1].channels_out
        }
    }
}

/// Learnable discriminator weights plus the shared standardization stats.
#[derive(Clone, Debug)]
pub struct DiscriminatorParams {
    pub config: DiscriminatorConfig,
    pub norm_stats: NormStats,
    pub c1_k: Parameter,
    pub c1_b: Parameter,
    pub c2_k: Parameter,
    pub c2_b: Parameter,
    pub c3_k: Parameter,
    pub c3_b: Parameter,
    pub dense_w: Parameter,
    pub dense_b: Parameter,
}

fn kernel_init(c_out: usize, c_in: usize, width: usize, rng: &mut impl Rng) -> Tensor {
    let fan_in = (c_in * width) as f64;
    let fan_out = (c_out * width) as f64;
    let limit = (6.0 / (fan_in + fan_out)).sqrt();
    let data = (0..c_out * c_in * width)
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * limit)
        .collect();
    Tensor::new(vec![c_out, c_in, width], data).expect("kernel shape")
}

fn dense_init(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * limit)
        .collect();
    Tensor::new(vec![rows, cols], data).expect("dense shape")
}

impl DiscriminatorParams {
    pub fn init(
        config: DiscriminatorConfig,
        norm_stats: NormStats,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        norm_stats.validate()?;
        let flat = config.flat_features()?;
        Ok(DiscriminatorParams {
            c1_k: Parameter::new(kernel_init(
                config.conv[0].channels_out,
                config.channels_in(0),
                config.conv[0].width,
                rng,
            )),
            c1_b: Parameter::new(Tensor::zeros(&[config.conv[0].channels_out])),
            c2_k: Parameter::new(kernel_init(
                config.conv[1].channels_out,
                config.channels_in(1),
                config.conv[1].width,
                rng,
            )),
            c2_b: Parameter::new(Tensor::zeros(&[config.conv[1].channels_out])),
            c3_k: Parameter::new(kernel_init(
                config.conv[2].channels_out,
                config.channels_in(2),
                config.conv[2].width,
                rng,
            )),
            c3_b: Parameter::new(Tensor::zeros(&[config.conv[2].channels_out])),
            dense_w: Parameter::new(dense_init(1, flat, rng)),
            dense_b: Parameter::new(Tensor::zeros(&[1])),
            config,
            norm_stats,
        })
    }

    pub fn zeroed(config: DiscriminatorConfig, norm_stats: NormStats) -> Result<Self> {
        config.validate()?;
        norm_stats.validate()?;
        let flat = config.flat_features()?;
        Ok(DiscriminatorParams {
            c1_k: Parameter::new(Tensor::zeros(&[
                config.conv[0].channels_out,
                config.channels_in(0),
                config.conv[0].width,
            ])),
            c1_b: Parameter::new(Tensor::zeros(&[config.conv[0].channels_out])),
            c2_k: Parameter::new(Tensor::zeros(&[
                config.conv[1].channels_out,
                config.channels_in(1),
                config.conv[1].width,
            ])),
            c2_b: Parameter::new(Tensor::zeros(&[config.conv[1].channels_out])),
            c3_k: Parameter::new(Tensor::zeros(&[
                config.conv[2].channels_out,
                config.channels_in(2),
                config.conv[2].width,
            ])),
            c3_b: Parameter::new(Tensor::zeros(&[config.conv[2].channels_out])),
            dense_w: Parameter::new(Tensor::zeros(&[1, flat])),
            dense_b: Parameter::new(Tensor::zeros(&[1])),
            config,
            norm_stats,
        })
    }

    pub fn params(&self) -> [&Parameter; 8] {
        [
            &self.c1_k,
            &self.c1_b,
            &self.c2_k,
            &self.c2_b,
            &self.c3_k,
            &self.c3_b,
            &self.dense_w,
            &self.dense_b,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 8] {
        [
            &mut self.c1_k,
            &mut self.c1_b,
            &mut self.c2_k,
            &mut self.c2_b,
            &mut self.c3_k,
            &mut self.c3_b,
            &mut self.dense_w,
            &mut self.dense_b,
        ]
    }

    pub const PARAM_NAMES: [&'static str; 8] = [
        "conv1_kernels",
        "conv1_bias",
        "conv2_kernels",
        "conv2_bias",
        "conv3_kernels",
        "conv3_bias",
        "dense_w",
        "dense_b",
    ];

    pub fn leaves(&self, tape: &mut Tape) -> DiscriminatorNodes {
        let p = self.params();
        DiscriminatorNodes {
            c1_k: tape.leaf(p[0].value.clone()),
            c1_b: tape.leaf(p[1].value.clone()),
            c2_k: tape.leaf(p[2].value.clone()),
            c2_b: tape.leaf(p[3].value.clone()),
            c3_k: tape.leaf(p[4].value.clone()),
            c3_b: tape.leaf(p[5].value.clone()),
            dense_w: tape.leaf(p[6].value.clone()),
            dense_b: tape.leaf(p[7].value.clone()),
        }
    }

    pub fn accumulate_grads(&mut self, nodes: &DiscriminatorNodes, grads: &[Tensor]) {
        let ids = nodes.ids();
        for (param, id) in self.params_mut().into_iter().zip(ids) {
            param.accumulate_grad(&grads[id.index()]);
        }
    }
}

/// Tape handles for the discriminator weights.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorNodes {
    pub c1_k: NodeId,
    pub c1_b: NodeId,
    pub c2_k: NodeId,
    pub c2_b: NodeId,
    pub c3_k: NodeId,
    pub c3_b: NodeId,
    pub dense_w: NodeId,
    pub dense_b: NodeId,
}

impl DiscriminatorNodes {
    pub fn ids(&self) -> [NodeId; 8] {
        [
            self.c1_k,
            self.c1_b,
            self.c2_k,
            self.c2_b,
            self.c3_k,
            self.c3_b,
            self.dense_w,
            self.dense_b,
        ]
    }
}

/// Score a segment already present on a tape. Returns the scalar sigmoid
/// output node; the value is strictly inside (0, 1).
pub fn discriminate_on_tape(
    tape: &mut Tape,
    disc: &DiscriminatorNodes,
    config: &DiscriminatorConfig,
    segment: &[CoordNode],
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<NodeId> {
    if segment.len() != config.segment_len {
        return Err(Error::invalid(
            "discriminate",
            format!(
                "segment length {} does not match configured length {}",
                segment.len(),
                config.segment_len
            ),
        ));
    }
    let std_nodes: Vec<NodeId> = segment.iter().map(|c| c.std).collect();
    let interleaved = tape.concat(&std_nodes)?;
    // [L, 3] row-major -> [3, L]: channels over time.
    let mut x = tape.transpose(interleaved, config.segment_len, 3)?;

    let stages = [
        (disc.c1_k, disc.c1_b, config.conv[0].stride),
        (disc.c2_k, disc.c2_b, config.conv[1].stride),
        (disc.c3_k, disc.c3_b, config.conv[2].stride),
    ];
    for (kernels, bias, stride) in stages {
        let conv = tape.conv1d(x, kernels, bias, stride)?;
        let active = tape.activate(conv, Activation::Elu);
        x = tape.dropout(active, config.dropout_rate, mode, rng)?;
    }

    let logit = {
        let wx = tape.matvec(disc.dense_w, x)?;
        tape.add(wx, disc.dense_b)?
    };
    Ok(tape.activate(logit, Activation::Sigmoid))
}

/// Value-level evaluation of one segment.
pub fn discriminate(
    params: &DiscriminatorParams,
    segment: &Trajectory,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let nodes = params.leaves(&mut tape);
    let norm = NormNodes::insert(&mut tape, &params.norm_stats);
    let coords: Vec<CoordNode> = segment
        .coords()
        .iter()
        .map(|&y| CoordNode::constant(&mut tape, &norm, y))
        .collect::<Result<_>>()?;
    let out = discriminate_on_tape(&mut tape, &nodes, &params.config, &coords, mode, rng)?;
    Ok(tape.value(out).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::rng::stream;
    use crate::trajectory::Coordinate;

    fn small_config() -> DiscriminatorConfig {
        DiscriminatorConfig {
            segment_len: 12,
            conv: [
                ConvSpec { channels_out: 4, width: 3, stride: 2 },
                ConvSpec { channels_out: 4, width: 3, stride: 1 },
                ConvSpec { channels_out: 4, width: 2, stride: 1 },
            ],
            dropout_rate: 0.5,
        }
    }

    fn demo_stats() -> NormStats {
        NormStats {
            mean: [25.0, 0.0, 50.0],
            std: [2.0, 0.5, 2.0],
        }
    }

    fn demo_segment(len: usize, phase: f64) -> Trajectory {
        let coords = (0..len)
            .map(|i| {
                let t = i as f64 * 0.3 + phase;
                Coordinate::new(25.0 + t.sin(), 0.1 * t, 50.0 + t.cos())
            })
            .collect();
        Trajectory::new(coords, 0.00476).unwrap()
    }

    #[test]
    fn default_topology_feature_lengths() {
        let lens = DiscriminatorConfig::default().feature_lens().unwrap();
        assert_eq!(lens, [48, 22, 10]);
    }

    #[test]
    fn zero_weights_score_half_for_any_input() {
        let params = DiscriminatorParams::zeroed(small_config(), demo_stats()).unwrap();
        let mut rng = stream(1, "dropout");
        for phase in [0.0, 1.0, -3.5] {
            let p = discriminate(&params, &demo_segment(12, phase), Mode::Train, &mut rng).unwrap();
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn eval_mode_is_bit_identical() {
        let mut init = stream(2, "init");
        let params = DiscriminatorParams::init(small_config(), demo_stats(), &mut init).unwrap();
        let segment = demo_segment(12, 0.7);
        let mut rng = stream(3, "dropout");
        let a = discriminate(&params, &segment, Mode::Eval, &mut rng).unwrap();
        let b = discriminate(&params, &segment, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn output_is_strictly_inside_unit_interval() {
        let mut init = stream(4, "init");
        let params = DiscriminatorParams::init(small_config(), demo_stats(), &mut init).unwrap();
        let mut rng = stream(5, "dropout");
        for phase in 0..10 {
            let p = discriminate(
                &params,
                &demo_segment(12, phase as f64 * 0.37),
                Mode::Train,
                &mut rng,
            )
            .unwrap();
            assert!(p > 0.0 && p < 1.0, "p = {p}");
        }
    }

    #[test]
    fn rejects_wrong_segment_length() {
        let params = DiscriminatorParams::zeroed(small_config(), demo_stats()).unwrap();
        let mut rng = stream(6, "dropout");
        assert!(discriminate(&params, &demo_segment(13, 0.0), Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn batch_order_does_not_leak_between_segments() {
        let mut init = stream(7, "init");
        let params = DiscriminatorParams::init(small_config(), demo_stats(), &mut init).unwrap();
        let (s1, s2) = (demo_segment(12, 0.1), demo_segment(12, 2.3));
        let mut rng = stream(8, "dropout");
        let a1 = discriminate(&params, &s1, Mode::Eval, &mut rng).unwrap();
        let a2 = discriminate(&params, &s2, Mode::Eval, &mut rng).unwrap();
        let b2 = discriminate(&params, &s2, Mode::Eval, &mut rng).unwrap();
        let b1 = discriminate(&params, &s1, Mode::Eval, &mut rng).unwrap();
        assert_eq!((a1, a2), (b1, b2));
    }

    #[test]
    fn log_d_gradient_passes_check_for_weights_and_input() {
        let mut init = stream(9, "init");
        let params = DiscriminatorParams::init(small_config(), demo_stats(), &mut init).unwrap();
        let segment = demo_segment(12, 0.4);
        let config = params.config.clone();
        let stats = params.norm_stats;

        let mut values: Vec<Tensor> = params.params().iter().map(|p| p.value.clone()).collect();
        for y in segment.coords() {
            values.push(Tensor::vector(vec![y.r, y.theta, y.z]));
        }

        let report = grad_check(&values, 1e-5, |tape, ids| {
            let disc = DiscriminatorNodes {
                c1_k: ids[0],
                c1_b: ids[1],
                c2_k: ids[2],
                c2_b: ids[3],
                c3_k: ids[4],
                c3_b: ids[5],
                dense_w: ids[6],
                dense_b: ids[7],
            };
            let norm = NormNodes::insert(tape, &stats);
            let coords: Vec<CoordNode> = ids[8..]
                .iter()
                .map(|&raw| CoordNode::from_raw(tape, &norm, raw))
                .collect::<crate::error::Result<_>>()?;
            let mut rng = stream(10, "dropout");
            let p = discriminate_on_tape(tape, &disc, &config, &coords, Mode::Train, &mut rng)?;
            let logp = tape.ln(p)?;
            Ok(tape.mean(logp))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
    }
}
