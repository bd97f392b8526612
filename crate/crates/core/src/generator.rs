//! Stochastic recurrent generator.
//!
//! One weight-shared cell maps the k most recent coordinates to a Gaussian
//! distribution over the next displacement and samples it with the
//! reparameterization trick, so every generated coordinate stays
//! differentiable in the cell weights. Chaining the cell autoregressively
//! extends a k-coordinate seed into a trajectory segment of any length.

use rand::Rng;

use crate::error::{Error, Result};
use crate::param::Parameter;
use crate::rng::standard_normal;
use crate::tape::{Activation, NodeId, Tape};
use crate::tensor::Tensor;
use crate::trajectory::{Coordinate, NormStats, Trajectory};

/// Cell topology. The two hidden layers share one activation; the mean head
/// is linear and the deviation head is softplus so sigma stays positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// History length: how many recent coordinates the cell sees.
    pub k: usize,
    pub h1: usize,
    pub h2: usize,
    pub phi: Activation,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            k: 10,
            h1: 64,
            h2: 64,
            phi: Activation::Tanh,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.h1 == 0 || self.h2 == 0 {
            return Err(Error::invalid(
                "GeneratorConfig",
                format!("k/h1/h2 must be positive, got {self:?}"),
            ));
        }
        Ok(())
    }
}

/// The learnable weight set shared by every position in the recurrent chain,
/// plus the frozen standardization statistics of the training set.
#[derive(Clone, Debug)]
pub struct GeneratorParams {
    pub config: GeneratorConfig,
    pub norm_stats: NormStats,
    pub w1: Parameter,
    pub b1: Parameter,
    pub w2: Parameter,
    pub b2: Parameter,
    pub w_mu: Parameter,
    pub b_mu: Parameter,
    pub w_sigma: Parameter,
    pub b_sigma: Parameter,
}

fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    scaled_xavier(rows, cols, 1.0, rng)
}

fn scaled_xavier(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Tensor {
    let limit = gain * (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * limit)
        .collect();
    Tensor::new(vec![rows, cols], data).expect("xavier shape")
}

impl GeneratorParams {
    /// Random initialization. The output heads start small (scaled-down
    /// weights, negative deviation bias) so early samples take tiny steps
    /// in standardized space; a fresh generator then emits near-random
    /// walks at roughly the data's increment scale instead of wild jumps,
    /// which keeps the early adversarial signal informative.
    pub fn init(config: GeneratorConfig, norm_stats: NormStats, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        norm_stats.validate()?;
        let in0 = 3 * config.k;
        let in1 = in0 + config.h1;
        Ok(GeneratorParams {
            config,
            norm_stats,
            w1: Parameter::new(xavier(config.h1, in0, rng)),
            b1: Parameter::new(Tensor::zeros(&[config.h1])),
            w2: Parameter::new(xavier(config.h2, in1, rng)),
            b2: Parameter::new(Tensor::zeros(&[config.h2])),
            w_mu: Parameter::new(scaled_xavier(3, config.h2, 0.1, rng)),
            b_mu: Parameter::new(Tensor::zeros(&[3])),
            w_sigma: Parameter::new(scaled_xavier(3, config.h2, 0.1, rng)),
            b_sigma: Parameter::new(Tensor::filled(&[3], -3.0)),
        })
    }

    /// Zeroed weights (useful for tests of the forward algebra).
    pub fn zeroed(config: GeneratorConfig, norm_stats: NormStats) -> Result<Self> {
        config.validate()?;
        norm_stats.validate()?;
        let in0 = 3 * config.k;
        let in1 = in0 + config.h1;
        Ok(GeneratorParams {
            config,
            norm_stats,
            w1: Parameter::new(Tensor::zeros(&[config.h1, in0])),
            b1: Parameter::new(Tensor::zeros(&[config.h1])),
            w2: Parameter::new(Tensor::zeros(&[config.h2, in1])),
            b2: Parameter::new(Tensor::zeros(&[config.h2])),
            w_mu: Parameter::new(Tensor::zeros(&[3, config.h2])),
            b_mu: Parameter::new(Tensor::zeros(&[3])),
            w_sigma: Parameter::new(Tensor::zeros(&[3, config.h2])),
            b_sigma: Parameter::new(Tensor::zeros(&[3])),
        })
    }

    pub fn params(&self) -> [&Parameter; 8] {
        [
            &self.w1, &self.b1, &self.w2, &self.b2, &self.w_mu, &self.b_mu, &self.w_sigma,
            &self.b_sigma,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 8] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w_mu,
            &mut self.b_mu,
            &mut self.w_sigma,
            &mut self.b_sigma,
        ]
    }

    pub const PARAM_NAMES: [&'static str; 8] = [
        "w1", "b1", "w2", "b2", "w_mu", "b_mu", "w_sigma", "b_sigma",
    ];

    /// Insert all weight tensors as tape leaves.
    pub fn leaves(&self, tape: &mut Tape) -> GeneratorNodes {
        let p = self.params();
        GeneratorNodes {
            w1: tape.leaf(p[0].value.clone()),
            b1: tape.leaf(p[1].value.clone()),
            w2: tape.leaf(p[2].value.clone()),
            b2: tape.leaf(p[3].value.clone()),
            w_mu: tape.leaf(p[4].value.clone()),
            b_mu: tape.leaf(p[5].value.clone()),
            w_sigma: tape.leaf(p[6].value.clone()),
            b_sigma: tape.leaf(p[7].value.clone()),
        }
    }

    /// Pull gradients for this parameter set out of a backward sweep.
    pub fn accumulate_grads(&mut self, nodes: &GeneratorNodes, grads: &[Tensor]) {
        let ids = nodes.ids();
        for (param, id) in self.params_mut().into_iter().zip(ids) {
            param.accumulate_grad(&grads[id.index()]);
        }
    }
}

/// Tape handles for the generator weights.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub w_mu: NodeId,
    pub b_mu: NodeId,
    pub w_sigma: NodeId,
    pub b_sigma: NodeId,
}

impl GeneratorNodes {
    pub fn ids(&self) -> [NodeId; 8] {
        [
            self.w1, self.b1, self.w2, self.b2, self.w_mu, self.b_mu, self.w_sigma, self.b_sigma,
        ]
    }
}

/// Standardization constants as tape nodes, shared by generator and
/// discriminator graphs.
#[derive(Clone, Copy, Debug)]
pub struct NormNodes {
    pub mean3: NodeId,
    pub inv_std3: NodeId,
    pub std3: NodeId,
}

impl NormNodes {
    pub fn insert(tape: &mut Tape, stats: &NormStats) -> NormNodes {
        NormNodes {
            mean3: tape.leaf(Tensor::vector(stats.mean.to_vec())),
            inv_std3: tape.leaf(Tensor::vector(stats.std.iter().map(|s| 1.0 / s).collect())),
            std3: tape.leaf(Tensor::vector(stats.std.to_vec())),
        }
    }
}

/// A coordinate on the tape: raw units plus its standardized image, cached
/// so each coordinate is standardized once no matter how many history
/// windows it appears in.
#[derive(Clone, Copy, Debug)]
pub struct CoordNode {
    pub raw: NodeId,
    pub std: NodeId,
}

impl CoordNode {
    pub fn constant(tape: &mut Tape, norm: &NormNodes, y: Coordinate) -> Result<CoordNode> {
        let raw = tape.leaf(Tensor::vector(vec![y.r, y.theta, y.z]));
        Self::from_raw(tape, norm, raw)
    }

    pub fn from_raw(tape: &mut Tape, norm: &NormNodes, raw: NodeId) -> Result<CoordNode> {
        let centered = tape.sub(raw, norm.mean3)?;
        let std = tape.mul(centered, norm.inv_std3)?;
        Ok(CoordNode { raw, std })
    }
}

/// Output handles of one recurrent step.
#[derive(Clone, Copy, Debug)]
pub struct StepNodes {
    pub next: CoordNode,
    pub mu: NodeId,
    pub sigma: NodeId,
}

fn check_finite(tape: &Tape, id: NodeId, layer: &str) -> Result<()> {
    if !tape.value(id).all_finite() {
        return Err(Error::non_finite(format!("generator {layer}")));
    }
    Ok(())
}

/// One recurrent step on an existing tape.
///
/// `history` holds the k most recent coordinates, newest first. The cell
/// standardizes and flattens them, runs two hidden layers (the second sees
/// the first layer's output concatenated with the flattened input), maps to
/// a mean and a softplus deviation, and samples the standardized increment
/// `mu + sigma * noise`. The new coordinate is the newest history entry plus
/// the increment scaled back to raw units.
pub fn step_on_tape(
    tape: &mut Tape,
    cell: &GeneratorNodes,
    norm: &NormNodes,
    config: &GeneratorConfig,
    history: &[CoordNode],
    noise: [f64; 3],
) -> Result<StepNodes> {
    if history.len() != config.k {
        return Err(Error::invalid(
            "generator step",
            format!("history must hold exactly k = {} coordinates, got {}", config.k, history.len()),
        ));
    }
    let std_nodes: Vec<NodeId> = history.iter().map(|c| c.std).collect();
    let x0 = tape.concat(&std_nodes)?;
    let x1 = tape.fully_connected(x0, cell.w1, cell.b1, config.phi)?;
    check_finite(tape, x1, "layer 1")?;
    let x01 = tape.concat(&[x0, x1])?;
    let x2 = tape.fully_connected(x01, cell.w2, cell.b2, config.phi)?;
    check_finite(tape, x2, "layer 2")?;
    let mu = tape.fully_connected(x2, cell.w_mu, cell.b_mu, Activation::Identity)?;
    check_finite(tape, mu, "mean head")?;
    let sigma = tape.fully_connected(x2, cell.w_sigma, cell.b_sigma, Activation::Softplus)?;
    check_finite(tape, sigma, "deviation head")?;

    let noise_node = tape.leaf(Tensor::vector(noise.to_vec()));
    let scaled_noise = tape.mul(sigma, noise_node)?;
    let delta_std = tape.add(mu, scaled_noise)?;
    let incr = tape.mul(delta_std, norm.std3)?;
    let next_raw = tape.add(history[0].raw, incr)?;
    check_finite(tape, next_raw, "output coordinate")?;
    let next = CoordNode::from_raw(tape, norm, next_raw)?;
    Ok(StepNodes { next, mu, sigma })
}

/// Autoregressive segment on an existing tape: seed coordinates become
/// constants, then `n_new` cell steps extend them. During warm-up the
/// history window mixes seed and generated coordinates. Returns all
/// `seed.len() + n_new` coordinates in time order.
pub fn segment_on_tape(
    tape: &mut Tape,
    cell: &GeneratorNodes,
    norm: &NormNodes,
    config: &GeneratorConfig,
    seed: &[Coordinate],
    noise: &[[f64; 3]],
) -> Result<Vec<CoordNode>> {
    if seed.len() != config.k {
        return Err(Error::invalid(
            "generate_segment",
            format!("seed must hold exactly k = {} coordinates, got {}", config.k, seed.len()),
        ));
    }
    let mut coords: Vec<CoordNode> = Vec::with_capacity(seed.len() + noise.len());
    for &y in seed {
        coords.push(CoordNode::constant(tape, norm, y)?);
    }
    let mut history: Vec<CoordNode> = Vec::with_capacity(config.k);
    for &eps in noise {
        history.clear();
        history.extend(coords.iter().rev().take(config.k));
        let step = step_on_tape(tape, cell, norm, config, &history, eps)?;
        coords.push(step.next);
    }
    Ok(coords)
}

fn coordinate_of(tape: &Tape, node: CoordNode) -> Coordinate {
    let v = tape.value(node.raw).data();
    Coordinate::new(v[0], v[1], v[2])
}

/// One value-level recurrent step. Returns the next coordinate together
/// with the mean and deviation the cell produced.
pub fn src_step(
    params: &GeneratorParams,
    history: &[Coordinate],
    noise: [f64; 3],
) -> Result<(Coordinate, [f64; 3], [f64; 3])> {
    let mut tape = Tape::new();
    let cell = params.leaves(&mut tape);
    let norm = NormNodes::insert(&mut tape, &params.norm_stats);
    let hist_nodes: Vec<CoordNode> = history
        .iter()
        .map(|&y| CoordNode::constant(&mut tape, &norm, y))
        .collect::<Result<_>>()?;
    let step = step_on_tape(&mut tape, &cell, &norm, &params.config, &hist_nodes, noise)?;
    let mu = tape.value(step.mu).data();
    let sigma = tape.value(step.sigma).data();
    Ok((
        coordinate_of(&tape, step.next),
        [mu[0], mu[1], mu[2]],
        [sigma[0], sigma[1], sigma[2]],
    ))
}

/// Generate `n_new` coordinates after a k-coordinate seed. The output
/// trajectory starts with the seed, bit for bit.
pub fn generate_segment(
    params: &GeneratorParams,
    seed: &[Coordinate],
    n_new: usize,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if n_new == 0 {
        return Err(Error::invalid("generate_segment", "n_new must be at least 1"));
    }
    let noise = draw_noise(n_new, rng);
    let mut tape = Tape::new();
    let cell = params.leaves(&mut tape);
    let norm = NormNodes::insert(&mut tape, &params.norm_stats);
    let nodes = segment_on_tape(&mut tape, &cell, &norm, &params.config, seed, &noise)?;
    let coords = nodes.iter().map(|&n| coordinate_of(&tape, n)).collect();
    Trajectory::new(coords, dt)
}

/// Repeatedly reseed from the newest k coordinates, generating
/// `segment_new` coordinates per iteration. The output holds the initial
/// seed followed by `n_iterations * segment_new` generated coordinates.
pub fn extend_trajectory(
    params: &GeneratorParams,
    initial_seed: &[Coordinate],
    n_iterations: usize,
    segment_new: usize,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if n_iterations == 0 {
        return Err(Error::invalid("extend_trajectory", "n_iterations must be at least 1"));
    }
    let k = params.config.k;
    let mut coords: Vec<Coordinate> = initial_seed.to_vec();
    for _ in 0..n_iterations {
        if coords.len() < k {
            return Err(Error::invalid(
                "extend_trajectory",
                format!("seed shorter than k = {k}"),
            ));
        }
        let seed: Vec<Coordinate> = coords[coords.len() - k..].to_vec();
        let segment = generate_segment(params, &seed, segment_new, dt, rng)?;
        coords.extend_from_slice(&segment.coords()[k..]);
    }
    Trajectory::new(coords, dt)
}

pub fn draw_noise(n: usize, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                standard_normal(rng),
                standard_normal(rng),
                standard_normal(rng),
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::rng::stream;

    fn small_config() -> GeneratorConfig {
        GeneratorConfig {
            k: 4,
            h1: 8,
            h2: 8,
            phi: Activation::Tanh,
        }
    }

    fn demo_stats() -> NormStats {
        NormStats {
            mean: [25.0, 0.0, 50.0],
            std: [2.0, 0.5, 2.0],
        }
    }

    fn seed_coords(k: usize) -> Vec<Coordinate> {
        (0..k)
            .map(|i| Coordinate::new(25.0 + 0.1 * i as f64, 0.02 * i as f64, 50.0 - 0.1 * i as f64))
            .collect()
    }

    #[test]
    fn zero_weights_zero_noise_returns_newest_history_entry() {
        let params = GeneratorParams::zeroed(small_config(), demo_stats()).unwrap();
        let history: Vec<Coordinate> = seed_coords(4).into_iter().rev().collect();
        let (next, mu, sigma) = src_step(&params, &history, [0.0; 3]).unwrap();
        assert_eq!(next, history[0]);
        assert_eq!(mu, [0.0; 3]);
        for s in sigma {
            assert!((s - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_noise_is_deterministic_mean_step() {
        let mut rng = stream(3, "init");
        let params = GeneratorParams::init(small_config(), demo_stats(), &mut rng).unwrap();
        let history: Vec<Coordinate> = seed_coords(4).into_iter().rev().collect();
        let (next, mu, _) = src_step(&params, &history, [0.0; 3]).unwrap();
        let incr = params.norm_stats.unstandardize_increment(mu);
        assert!((next.r - (history[0].r + incr[0])).abs() < 1e-12);
        assert!((next.theta - (history[0].theta + incr[1])).abs() < 1e-12);
        assert!((next.z - (history[0].z + incr[2])).abs() < 1e-12);
    }

    #[test]
    fn sigma_is_strictly_positive() {
        let mut rng = stream(4, "init");
        let params = GeneratorParams::init(small_config(), demo_stats(), &mut rng).unwrap();
        let history: Vec<Coordinate> = seed_coords(4).into_iter().rev().collect();
        for trial in 0..20 {
            let noise = [
                (trial as f64).sin(),
                (trial as f64).cos(),
                0.3 * trial as f64,
            ];
            let (_, _, sigma) = src_step(&params, &history, noise).unwrap();
            assert!(sigma.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn segment_preserves_seed_exactly() {
        let mut rng = stream(5, "init");
        let params = GeneratorParams::init(small_config(), demo_stats(), &mut rng).unwrap();
        let seed = seed_coords(4);
        let mut noise_rng = stream(5, "noise");
        let traj = generate_segment(&params, &seed, 9, 0.00476, &mut noise_rng).unwrap();
        assert_eq!(traj.len(), 13);
        assert_eq!(&traj.coords()[..4], seed.as_slice());
        assert!(traj.coords().iter().all(Coordinate::is_finite));
    }

    #[test]
    fn zero_weight_zero_noise_segment_repeats_newest_seed_coordinate() {
        let params = GeneratorParams::zeroed(small_config(), demo_stats()).unwrap();
        let seed = seed_coords(4);
        let mut tape = Tape::new();
        let cell = params.leaves(&mut tape);
        let norm = NormNodes::insert(&mut tape, &params.norm_stats);
        let nodes =
            segment_on_tape(&mut tape, &cell, &norm, &params.config, &seed, &[[0.0; 3]; 6]).unwrap();
        for node in &nodes[4..] {
            let v = tape.value(node.raw).data();
            assert_eq!(v, &[seed[3].r, seed[3].theta, seed[3].z]);
        }
    }

    #[test]
    fn fixed_rng_seed_reproduces_segments_bit_exactly() {
        let mut rng = stream(6, "init");
        let params = GeneratorParams::init(small_config(), demo_stats(), &mut rng).unwrap();
        let seed = seed_coords(4);
        let run = || {
            let mut noise_rng = stream(17, "noise");
            generate_segment(&params, &seed, 20, 0.00476, &mut noise_rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn distinct_rng_seeds_differ() {
        let mut rng = stream(6, "init");
        let params = GeneratorParams::init(small_config(), demo_stats(), &mut rng).unwrap();
        let seed = seed_coords(4);
        for trial in 0..10 {
            let mut a = stream(100 + trial, "noise");
            let mut b = stream(200 + trial, "noise");
            let ta = generate_segment(&params, &seed, 100, 0.00476, &mut a).unwrap();
            let tb = generate_segment(&params, &seed, 100, 0.00476, &mut b).unwrap();
            assert_ne!(ta, tb, "trial {trial}");
        }
    }

    #[test]
    fn extension_matches_single_segment_for_one_iteration() {
        let mut rng = stream(7, "init");
        let params = GeneratorParams::init(small_config(), demo_stats(), &mut rng).unwrap();
        let seed = seed_coords(4);
        let mut a = stream(9, "noise");
        let mut b = stream(9, "noise");
        let ext = extend_trajectory(&params, &seed, 1, 12, 0.00476, &mut a).unwrap();
        let seg = generate_segment(&params, &seed, 12, 0.00476, &mut b).unwrap();
        assert_eq!(ext, seg);
    }

    #[test]
    fn extension_length_bookkeeping() {
        let mut rng = stream(8, "init");
        let params = GeneratorParams::init(small_config(), demo_stats(), &mut rng).unwrap();
        let seed = seed_coords(4);
        let mut noise_rng = stream(10, "noise");
        let traj = extend_trajectory(&params, &seed, 5, 7, 0.00476, &mut noise_rng).unwrap();
        assert_eq!(traj.len(), 4 + 5 * 7);
        assert_eq!(&traj.coords()[..4], seed.as_slice());
    }

    #[test]
    fn whole_segment_gradient_passes_finite_difference_check() {
        // Gradient of the mean generated coordinate with respect to every
        // cell weight, through the full autoregressive chain.
        let mut rng = stream(11, "init");
        let params = GeneratorParams::init(small_config(), demo_stats(), &mut rng).unwrap();
        let seed = seed_coords(4);
        let mut noise_rng = stream(12, "noise");
        let noise = draw_noise(6, &mut noise_rng);
        let config = params.config;
        let stats = params.norm_stats;
        let values: Vec<Tensor> = params.params().iter().map(|p| p.value.clone()).collect();

        let report = grad_check(&values, 1e-5, |tape, ids| {
            let cell = GeneratorNodes {
                w1: ids[0],
                b1: ids[1],
                w2: ids[2],
                b2: ids[3],
                w_mu: ids[4],
                b_mu: ids[5],
                w_sigma: ids[6],
                b_sigma: ids[7],
            };
            let norm = NormNodes::insert(tape, &stats);
            let coords = segment_on_tape(tape, &cell, &norm, &config, &seed, &noise)?;
            let generated: Vec<NodeId> = coords[4..].iter().map(|c| c.raw).collect();
            let all = tape.concat(&generated)?;
            Ok(tape.mean(all))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
    }
}
