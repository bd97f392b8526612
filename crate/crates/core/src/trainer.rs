//! Adversarial training loop.
//!
//! Every inner step samples a minibatch of real segments, generates fakes
//! from their k-coordinate seeds, and applies one Adam step to the
//! generator (from the generator objective) followed by one to the
//! discriminator (from the cross-entropy objective). The discriminator
//! update re-scores the same fake samples as constants, so no gradient
//! flows back into the generator there. Per epoch the loop records mean
//! losses and mean real/fake scores and evaluates the early-stop rule.

use rand::Rng;

use crate::discriminator::{discriminate_on_tape, DiscriminatorNodes, DiscriminatorParams};
use crate::error::{Error, Result};
use crate::generator::{segment_on_tape, CoordNode, GeneratorNodes, GeneratorParams, NormNodes};
use crate::rng::stream;
use crate::tape::{Mode, NodeId, Tape};
use crate::trajectory::{Coordinate, Trajectory};

/// Which objective drives the generator update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorObjective {
    /// Minimize log(1 - D(fake)): the saturating form.
    Saturating,
    /// Minimize -log D(fake).
    NonSaturating,
}

/// Early-stop rule: once the moving average of |J_D - 2 ln 2| over `window`
/// epochs falls below `jd_tol` while the epoch's |D(real) - D(fake)| gap is
/// below `gap_tol`, for `patience` consecutive epochs, training stops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStopConfig {
    pub enabled: bool,
    pub window: usize,
    pub jd_tol: f64,
    pub gap_tol: f64,
    pub patience: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            enabled: true,
            window: 50,
            jd_tol: 0.05,
            gap_tol: 0.1,
            patience: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Update steps per epoch.
    pub inner_steps: usize,
    /// Segments per minibatch.
    pub minibatch_m: usize,
    /// Training segment length.
    pub segment_len: usize,
    pub lr: f64,
    /// Per-network overrides; `None` falls back to `lr`.
    pub lr_gen: Option<f64>,
    pub lr_disc: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Probabilities are clamped to [clamp_eps, 1 - clamp_eps] before logs.
    pub clamp_eps: f64,
    pub objective: GeneratorObjective,
    pub early_stop: EarlyStopConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5000,
            inner_steps: 10,
            minibatch_m: 15,
            segment_len: 100,
            lr: 1e-4,
            lr_gen: None,
            lr_disc: None,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            clamp_eps: 1e-7,
            objective: GeneratorObjective::Saturating,
            early_stop: EarlyStopConfig::default(),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch_m == 0 || self.inner_steps == 0 {
            return Err(Error::invalid(
                "TrainConfig",
                "minibatch_m and inner_steps must be at least 1",
            ));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::invalid(
                "TrainConfig",
                format!("clamp_eps must lie in (0, 0.5), got {}", self.clamp_eps),
            ));
        }
        if !(self.lr >= 0.0) || self.lr_gen.is_some_and(|v| !(v >= 0.0)) || self.lr_disc.is_some_and(|v| !(v >= 0.0)) {
            return Err(Error::invalid("TrainConfig", "learning rates must be non-negative"));
        }
        Ok(())
    }

    pub fn lr_gen(&self) -> f64 {
        self.lr_gen.unwrap_or(self.lr)
    }

    pub fn lr_disc(&self) -> f64 {
        self.lr_disc.unwrap_or(self.lr)
    }
}

/// Per-epoch telemetry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub mean_jg: f64,
    pub mean_jd: f64,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
}

/// How a training run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    CompletedAllEpochs,
    EarlyStopped { epoch: usize },
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub records: Vec<LossRecord>,
    pub stop: StopReason,
}

/// Uniformly sample `m` contiguous windows of length `segment_len`: a
/// uniformly random trajectory, then a uniformly random admissible offset.
pub fn sample_minibatch(
    dataset: &[Trajectory],
    m: usize,
    segment_len: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Trajectory>> {
    if dataset.is_empty() {
        return Err(Error::invalid("sample_minibatch", "empty dataset"));
    }
    for (i, t) in dataset.iter().enumerate() {
        if t.len() < segment_len {
            return Err(Error::invalid(
                "sample_minibatch",
                format!(
                    "segment length {segment_len} exceeds trajectory {i} length {}",
                    t.len()
                ),
            ));
        }
    }
    (0..m)
        .map(|_| {
            let t = &dataset[rng.gen_range(0..dataset.len())];
            let offset = rng.gen_range(0..=t.len() - segment_len);
            t.window(offset, segment_len)
        })
        .collect()
}

/// Mean of log(1 - D) over a minibatch, with clamped probabilities
/// (the saturating generator objective, as a plain value).
pub fn generator_loss(d_fake: &[f64], clamp_eps: f64) -> f64 {
    let m = d_fake.len() as f64;
    d_fake
        .iter()
        .map(|d| (1.0 - d.clamp(clamp_eps, 1.0 - clamp_eps)).ln())
        .sum::<f64>()
        / m
}

/// Cross-entropy discriminator loss: -mean log D(real) - mean log(1 - D(fake)).
pub fn discriminator_loss(d_real: &[f64], d_fake: &[f64], clamp_eps: f64) -> f64 {
    let real: f64 = d_real
        .iter()
        .map(|d| d.clamp(clamp_eps, 1.0 - clamp_eps).ln())
        .sum::<f64>()
        / d_real.len() as f64;
    let fake: f64 = d_fake
        .iter()
        .map(|d| (1.0 - d.clamp(clamp_eps, 1.0 - clamp_eps)).ln())
        .sum::<f64>()
        / d_fake.len() as f64;
    -real - fake
}

/// Build the generator objective on a tape: generate one fake segment per
/// seed, score each with the discriminator (train mode), clamp, and reduce.
/// Returns the scalar objective node, the raw (pre-clamp) scores, and the
/// generated segments as plain coordinates.
#[allow(clippy::too_many_arguments)]
pub fn build_generator_objective(
    tape: &mut Tape,
    gen_nodes: &GeneratorNodes,
    disc_nodes: &DiscriminatorNodes,
    norm: &NormNodes,
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
    seeds: &[Vec<Coordinate>],
    noise: &[Vec<[f64; 3]>],
    objective: GeneratorObjective,
    clamp_eps: f64,
    dropout_rng: &mut impl Rng,
) -> Result<(NodeId, Vec<f64>, Vec<Vec<Coordinate>>)> {
    let mut terms = Vec::with_capacity(seeds.len());
    let mut scores = Vec::with_capacity(seeds.len());
    let mut fakes = Vec::with_capacity(seeds.len());
    for (seed, eps) in seeds.iter().zip(noise) {
        let segment = segment_on_tape(tape, gen_nodes, norm, &gen.config, seed, eps)?;
        let d = discriminate_on_tape(
            tape,
            disc_nodes,
            &disc.config,
            &segment,
            Mode::Train,
            dropout_rng,
        )?;
        scores.push(tape.value(d).item());
        let clamped = tape.clamp(d, clamp_eps, 1.0 - clamp_eps);
        let term = match objective {
            GeneratorObjective::Saturating => {
                let one_minus = tape.one_minus(clamped);
                tape.ln(one_minus)?
            }
            GeneratorObjective::NonSaturating => tape.ln(clamped)?,
        };
        terms.push(term);
        fakes.push(
            segment
                .iter()
                .map(|c| {
                    let v = tape.value(c.raw).data();
                    Coordinate::new(v[0], v[1], v[2])
                })
                .collect(),
        );
    }
    let stacked = tape.concat(&terms)?;
    let mean = tape.mean(stacked);
    let objective_node = match objective {
        GeneratorObjective::Saturating => mean,
        GeneratorObjective::NonSaturating => tape.scale(mean, -1.0),
    };
    Ok((objective_node, scores, fakes))
}

/// Build the discriminator objective on a tape from fixed real and fake
/// segments. Returns the scalar loss node and the raw scores on both sides.
pub fn build_discriminator_objective(
    tape: &mut Tape,
    disc_nodes: &DiscriminatorNodes,
    norm: &NormNodes,
    disc: &DiscriminatorParams,
    real: &[Vec<Coordinate>],
    fake: &[Vec<Coordinate>],
    clamp_eps: f64,
    dropout_rng: &mut impl Rng,
) -> Result<(NodeId, Vec<f64>, Vec<f64>)> {
    let mut d_real_raw = Vec::with_capacity(real.len());
    let mut d_fake_raw = Vec::with_capacity(fake.len());
    let mut real_terms = Vec::with_capacity(real.len());
    let mut fake_terms = Vec::with_capacity(fake.len());

    for segment in real {
        let coords: Vec<CoordNode> = segment
            .iter()
            .map(|&y| CoordNode::constant(tape, norm, y))
            .collect::<Result<_>>()?;
        let d = discriminate_on_tape(tape, disc_nodes, &disc.config, &coords, Mode::Train, dropout_rng)?;
        d_real_raw.push(tape.value(d).item());
        let clamped = tape.clamp(d, clamp_eps, 1.0 - clamp_eps);
        real_terms.push(tape.ln(clamped)?);
    }
    for segment in fake {
        let coords: Vec<CoordNode> = segment
            .iter()
            .map(|&y| CoordNode::constant(tape, norm, y))
            .collect::<Result<_>>()?;
        let d = discriminate_on_tape(tape, disc_nodes, &disc.config, &coords, Mode::Train, dropout_rng)?;
        d_fake_raw.push(tape.value(d).item());
        let clamped = tape.clamp(d, clamp_eps, 1.0 - clamp_eps);
        let one_minus = tape.one_minus(clamped);
        fake_terms.push(tape.ln(one_minus)?);
    }

    let real_stack = tape.concat(&real_terms)?;
    let real_mean = tape.mean(real_stack);
    let fake_stack = tape.concat(&fake_terms)?;
    let fake_mean = tape.mean(fake_stack);
    let sum = tape.add(real_mean, fake_mean)?;
    let loss = tape.scale(sum, -1.0);
    Ok((loss, d_real_raw, d_fake_raw))
}

/// Run the adversarial loop. `epoch_hook` fires after each epoch's record
/// is final (checkpointing lives there). Aborts with an error if any loss
/// turns non-finite.
pub fn train(
    dataset: &[Trajectory],
    gen: &mut GeneratorParams,
    disc: &mut DiscriminatorParams,
    cfg: &TrainConfig,
    mut epoch_hook: impl FnMut(&LossRecord, &GeneratorParams, &DiscriminatorParams) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let k = gen.config.k;
    if cfg.segment_len <= k {
        return Err(Error::invalid(
            "train",
            format!("segment_len {} must exceed the history length k = {k}", cfg.segment_len),
        ));
    }
    if disc.config.segment_len != cfg.segment_len {
        return Err(Error::invalid(
            "train",
            format!(
                "discriminator expects segments of {}, config trains on {}",
                disc.config.segment_len, cfg.segment_len
            ),
        ));
    }
    let mut minibatch_rng = stream(cfg.seed, "minibatch");
    let mut noise_rng = stream(cfg.seed, "noise");
    let mut dropout_rng = stream(cfg.seed, "dropout");

    let mut records: Vec<LossRecord> = Vec::with_capacity(cfg.epochs);
    let mut stop_streak = 0usize;

    for epoch in 0..cfg.epochs {
        let mut jg_sum = 0.0;
        let mut jd_sum = 0.0;
        let mut d_real_sum = 0.0;
        let mut d_fake_sum = 0.0;

        for step in 0..cfg.inner_steps {
            let batch = sample_minibatch(dataset, cfg.minibatch_m, cfg.segment_len, &mut minibatch_rng)?;
            let seeds: Vec<Vec<Coordinate>> =
                batch.iter().map(|t| t.coords()[..k].to_vec()).collect();
            let noise: Vec<Vec<[f64; 3]>> = (0..batch.len())
                .map(|_| crate::generator::draw_noise(cfg.segment_len - k, &mut noise_rng))
                .collect();

            // Generator update.
            let mut tape = Tape::new();
            let gen_nodes = gen.leaves(&mut tape);
            let disc_nodes = disc.leaves(&mut tape);
            let norm = NormNodes::insert(&mut tape, &gen.norm_stats);
            let (jg_node, gen_scores, fakes) = build_generator_objective(
                &mut tape,
                &gen_nodes,
                &disc_nodes,
                &norm,
                gen,
                disc,
                &seeds,
                &noise,
                cfg.objective,
                cfg.clamp_eps,
                &mut dropout_rng,
            )?;
            let jg_for_descent = tape.value(jg_node).item();
            if !jg_for_descent.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            let grads = tape.backward(jg_node)?;
            gen.accumulate_grads(&gen_nodes, &grads);
            for p in gen.params_mut() {
                p.adam_step(cfg.lr_gen(), cfg.beta1, cfg.beta2, cfg.adam_eps);
            }
            // Telemetry reports the cross-entropy generator objective even
            // when the descent direction uses the non-saturating form.
            let jg = generator_loss(&gen_scores, cfg.clamp_eps);

            // Discriminator update on the same minibatch and fake samples.
            let real: Vec<Vec<Coordinate>> =
                batch.iter().map(|t| t.coords().to_vec()).collect();
            let mut tape = Tape::new();
            let disc_nodes = disc.leaves(&mut tape);
            let norm = NormNodes::insert(&mut tape, &disc.norm_stats);
            let (jd_node, d_real, d_fake) = build_discriminator_objective(
                &mut tape,
                &disc_nodes,
                &norm,
                disc,
                &real,
                &fakes,
                cfg.clamp_eps,
                &mut dropout_rng,
            )?;
            let jd = tape.value(jd_node).item();
            if !jd.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            let grads = tape.backward(jd_node)?;
            disc.accumulate_grads(&disc_nodes, &grads);
            for p in disc.params_mut() {
                p.adam_step(cfg.lr_disc(), cfg.beta1, cfg.beta2, cfg.adam_eps);
            }

            jg_sum += jg;
            jd_sum += jd;
            d_real_sum += d_real.iter().sum::<f64>() / d_real.len() as f64;
            d_fake_sum += d_fake.iter().sum::<f64>() / d_fake.len() as f64;
        }

        let n = cfg.inner_steps as f64;
        let record = LossRecord {
            epoch,
            mean_jg: jg_sum / n,
            mean_jd: jd_sum / n,
            mean_d_real: d_real_sum / n,
            mean_d_fake: d_fake_sum / n,
        };
        records.push(record);
        epoch_hook(&record, gen, disc)?;

        if cfg.early_stop.enabled && records.len() >= cfg.early_stop.window {
            let window = &records[records.len() - cfg.early_stop.window..];
            let target = 2.0 * std::f64::consts::LN_2;
            let jd_ma = window.iter().map(|r| (r.mean_jd - target).abs()).sum::<f64>()
                / window.len() as f64;
            let gap = (record.mean_d_real - record.mean_d_fake).abs();
            if jd_ma < cfg.early_stop.jd_tol && gap < cfg.early_stop.gap_tol {
                stop_streak += 1;
                if stop_streak >= cfg.early_stop.patience {
                    return Ok(TrainOutcome {
                        records,
                        stop: StopReason::EarlyStopped { epoch },
                    });
                }
            } else {
                stop_streak = 0;
            }
        }
    }
    Ok(TrainOutcome {
        records,
        stop: StopReason::CompletedAllEpochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discriminator::{ConvSpec, DiscriminatorConfig};
    use crate::generator::GeneratorConfig;
    use crate::gradcheck::grad_check;
    use crate::tape::Activation;
    use crate::tensor::Tensor;
    use crate::trajectory::NormStats;

    const DT: f64 = 0.00476;

    fn tiny_gen_config() -> GeneratorConfig {
        GeneratorConfig {
            k: 4,
            h1: 8,
            h2: 8,
            phi: Activation::Tanh,
        }
    }

    fn tiny_disc_config() -> DiscriminatorConfig {
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

    fn toy_dataset(n: usize, len: usize) -> Vec<Trajectory> {
        (0..n)
            .map(|i| {
                let coords = (0..len)
                    .map(|t| {
                        let x = t as f64 * 0.25 + i as f64;
                        Coordinate::new(25.0 + x.sin(), 0.05 * x, 50.0 + 0.5 * x.cos())
                    })
                    .collect();
                Trajectory::new(coords, DT).unwrap()
            })
            .collect()
    }

    fn tiny_setup(seed: u64) -> (Vec<Trajectory>, GeneratorParams, DiscriminatorParams) {
        let dataset = toy_dataset(6, 40);
        let stats = NormStats::from_dataset(&dataset).unwrap();
        let mut rng = stream(seed, "init");
        let gen = GeneratorParams::init(tiny_gen_config(), stats, &mut rng).unwrap();
        let disc = DiscriminatorParams::init(tiny_disc_config(), stats, &mut rng).unwrap();
        (dataset, gen, disc)
    }

    fn tiny_train_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            inner_steps: 2,
            minibatch_m: 2,
            segment_len: 12,
            lr: 1e-3,
            early_stop: EarlyStopConfig {
                enabled: false,
                ..EarlyStopConfig::default()
            },
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn minibatch_windows_are_admissible_and_reproducible() {
        let dataset = toy_dataset(4, 30);
        let mut a = stream(1, "minibatch");
        let mut b = stream(1, "minibatch");
        let batch_a = sample_minibatch(&dataset, 3, 12, &mut a).unwrap();
        let batch_b = sample_minibatch(&dataset, 3, 12, &mut b).unwrap();
        assert_eq!(batch_a, batch_b);
        assert!(batch_a.iter().all(|s| s.len() == 12));
    }

    #[test]
    fn full_length_segment_is_the_trajectory_itself() {
        let dataset = toy_dataset(2, 20);
        let mut rng = stream(2, "minibatch");
        let batch = sample_minibatch(&dataset, 8, 20, &mut rng).unwrap();
        for s in batch {
            assert!(dataset.contains(&s));
        }
    }

    #[test]
    fn minibatch_offsets_cover_the_admissible_range() {
        // 10^4 draws of 100-step windows from 1,100-step data: offsets span
        // [0, 1000] with no gaps wider than 50.
        let dataset = vec![toy_dataset(1, 1100).remove(0)];
        let mut rng = stream(3, "minibatch");
        let mut seen = vec![false; 1001];
        for _ in 0..10_000 {
            let seg = sample_minibatch(&dataset, 1, 100, &mut rng).unwrap().remove(0);
            let first = seg.coords()[0];
            let offset = dataset[0]
                .coords()
                .iter()
                .position(|c| *c == first)
                .unwrap();
            seen[offset] = true;
        }
        let mut gap = 0usize;
        let mut worst = 0usize;
        for s in seen {
            gap = if s { 0 } else { gap + 1 };
            worst = worst.max(gap);
        }
        assert!(worst <= 50, "largest uncovered run {worst}");
    }

    #[test]
    fn minibatch_rejects_oversized_segments() {
        let dataset = toy_dataset(2, 20);
        let mut rng = stream(4, "minibatch");
        assert!(sample_minibatch(&dataset, 1, 21, &mut rng).is_err());
    }

    #[test]
    fn loss_values_match_closed_forms() {
        let eps = 1e-7;
        // all scores 1/2
        let jg = generator_loss(&[0.5, 0.5, 0.5], eps);
        assert!((jg - 0.5f64.ln()).abs() < 1e-12);
        assert!((jg + 0.693147).abs() < 1e-6);
        let jd = discriminator_loss(&[0.5, 0.5], &[0.5, 0.5], eps);
        assert!((jd - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((jd - 1.386294).abs() < 1e-6);
        // generator fully rejected
        let jg = generator_loss(&[0.0], eps);
        assert!((jg - (1.0 - eps).ln()).abs() < 1e-15);
        assert!(jg.abs() < 2e-7);
        // perfect discrimination
        let jd = discriminator_loss(&[1.0 - 1e-9], &[1e-9], eps);
        assert!(jd >= 0.0 && jd < 1e-5);
    }

    #[test]
    fn generator_loss_is_monotone_in_scores() {
        let eps = 1e-7;
        let mut prev = generator_loss(&[0.05], eps);
        for d in [0.2, 0.4, 0.6, 0.8, 0.95] {
            let cur = generator_loss(&[d], eps);
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn discriminator_loss_is_nonnegative_and_finite_under_clamping() {
        let eps = 1e-7;
        for scores in [[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]] {
            let jd = discriminator_loss(&scores, &scores, eps);
            assert!(jd.is_finite());
            assert!(jd >= 0.0);
        }
    }

    #[test]
    fn zero_epochs_returns_params_unchanged() {
        let (dataset, mut gen, mut disc) = tiny_setup(5);
        let before_gen: Vec<Tensor> = gen.params().iter().map(|p| p.value.clone()).collect();
        let before_disc: Vec<Tensor> = disc.params().iter().map(|p| p.value.clone()).collect();
        let cfg = TrainConfig {
            epochs: 0,
            ..tiny_train_config()
        };
        let outcome = train(&dataset, &mut gen, &mut disc, &cfg, |_, _, _| Ok(())).unwrap();
        assert!(outcome.records.is_empty());
        assert_eq!(outcome.stop, StopReason::CompletedAllEpochs);
        for (p, b) in gen.params().iter().zip(&before_gen) {
            assert_eq!(&p.value, b);
        }
        for (p, b) in disc.params().iter().zip(&before_disc) {
            assert_eq!(&p.value, b);
        }
    }

    #[test]
    fn updates_do_not_cross_the_parameter_partition() {
        // One forced-single-step run with the generator frozen must leave
        // every generator tensor bit-identical while moving the
        // discriminator, and vice versa.
        let (dataset, mut gen, mut disc) = tiny_setup(6);
        let checksum = |params: &[&crate::param::Parameter]| -> Vec<f64> {
            params
                .iter()
                .map(|p| p.value.data().iter().sum::<f64>())
                .collect()
        };
        let gen_before: Vec<Tensor> = gen.params().iter().map(|p| p.value.clone()).collect();
        let disc_sum_before = checksum(&disc.params());
        let cfg = TrainConfig {
            epochs: 1,
            inner_steps: 1,
            lr_gen: Some(0.0),
            ..tiny_train_config()
        };
        train(&dataset, &mut gen, &mut disc, &cfg, |_, _, _| Ok(())).unwrap();
        for (p, b) in gen.params().iter().zip(&gen_before) {
            assert_eq!(&p.value, b, "generator tensor changed under lr 0");
        }
        assert_ne!(checksum(&disc.params()), disc_sum_before);

        let (dataset, mut gen, mut disc) = tiny_setup(6);
        let disc_before: Vec<Tensor> = disc.params().iter().map(|p| p.value.clone()).collect();
        let gen_sum_before = checksum(&gen.params());
        let cfg = TrainConfig {
            epochs: 1,
            inner_steps: 1,
            lr_disc: Some(0.0),
            ..tiny_train_config()
        };
        train(&dataset, &mut gen, &mut disc, &cfg, |_, _, _| Ok(())).unwrap();
        for (p, b) in disc.params().iter().zip(&disc_before) {
            assert_eq!(&p.value, b, "discriminator tensor changed under lr 0");
        }
        assert_ne!(checksum(&gen.params()), gen_sum_before);
    }

    #[test]
    fn identical_seeds_give_identical_loss_records() {
        let run = || {
            let (dataset, mut gen, mut disc) = tiny_setup(7);
            let cfg = TrainConfig {
                epochs: 4,
                ..tiny_train_config()
            };
            train(&dataset, &mut gen, &mut disc, &cfg, |_, _, _| Ok(()))
                .unwrap()
                .records
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn frozen_generator_lets_the_discriminator_learn() {
        // With the generator frozen the discriminator is a plain supervised
        // classifier on separable data; its loss must drop.
        let (dataset, mut gen, mut disc) = tiny_setup(8);
        let cfg = TrainConfig {
            epochs: 200,
            inner_steps: 2,
            minibatch_m: 4,
            lr: 2e-3,
            lr_gen: Some(0.0),
            ..tiny_train_config()
        };
        let outcome = train(&dataset, &mut gen, &mut disc, &cfg, |_, _, _| Ok(())).unwrap();
        let first = outcome.records.first().unwrap().mean_jd;
        let tail: f64 = outcome.records[190..]
            .iter()
            .map(|r| r.mean_jd)
            .sum::<f64>()
            / 10.0;
        assert!(
            tail < first,
            "discriminator loss should fall: first {first}, tail mean {tail}"
        );
    }

    #[test]
    fn losses_stay_finite_with_clamping() {
        let (dataset, mut gen, mut disc) = tiny_setup(9);
        let cfg = TrainConfig {
            epochs: 10,
            lr: 5e-2, // aggressive on purpose
            ..tiny_train_config()
        };
        let outcome = train(&dataset, &mut gen, &mut disc, &cfg, |_, _, _| Ok(())).unwrap();
        for r in &outcome.records {
            assert!(r.mean_jg.is_finite());
            assert!(r.mean_jd.is_finite());
        }
    }

    #[test]
    fn hook_sees_every_epoch() {
        let (dataset, mut gen, mut disc) = tiny_setup(10);
        let cfg = tiny_train_config();
        let mut epochs_seen = Vec::new();
        train(&dataset, &mut gen, &mut disc, &cfg, |r, _, _| {
            epochs_seen.push(r.epoch);
            Ok(())
        })
        .unwrap();
        assert_eq!(epochs_seen, vec![0, 1, 2]);
    }

    #[test]
    fn objective_gradients_pass_finite_difference_check() {
        // J_G with respect to generator weights (through the generated
        // segments and the discriminator), and J_D with respect to
        // discriminator weights, on a tiny fixed-noise instance.
        let (dataset, gen, disc) = tiny_setup(12);
        let cfg = tiny_train_config();
        let mut mb = stream(13, "minibatch");
        let batch = sample_minibatch(&dataset, 2, cfg.segment_len, &mut mb).unwrap();
        let seeds: Vec<Vec<Coordinate>> = batch
            .iter()
            .map(|t| t.coords()[..gen.config.k].to_vec())
            .collect();
        let mut noise_rng = stream(14, "noise");
        let noise: Vec<Vec<[f64; 3]>> = (0..batch.len())
            .map(|_| crate::generator::draw_noise(cfg.segment_len - gen.config.k, &mut noise_rng))
            .collect();

        let gen_values: Vec<Tensor> = gen.params().iter().map(|p| p.value.clone()).collect();
        let report = grad_check(&gen_values, 1e-5, |tape, ids| {
            let gen_nodes = GeneratorNodes {
                w1: ids[0],
                b1: ids[1],
                w2: ids[2],
                b2: ids[3],
                w_mu: ids[4],
                b_mu: ids[5],
                w_sigma: ids[6],
                b_sigma: ids[7],
            };
            let disc_nodes = disc.leaves(tape);
            let norm = NormNodes::insert(tape, &gen.norm_stats);
            let mut dropout = stream(15, "dropout");
            let (jg, _, _) = build_generator_objective(
                tape,
                &gen_nodes,
                &disc_nodes,
                &norm,
                &gen,
                &disc,
                &seeds,
                &noise,
                GeneratorObjective::Saturating,
                cfg.clamp_eps,
                &mut dropout,
            )?;
            Ok(jg)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "J_G rel err {}", report.max_rel_err);

        let real: Vec<Vec<Coordinate>> = batch.iter().map(|t| t.coords().to_vec()).collect();
        let fake: Vec<Vec<Coordinate>> = {
            let mut tape = Tape::new();
            let gen_nodes = gen.leaves(&mut tape);
            let disc_nodes = disc.leaves(&mut tape);
            let norm = NormNodes::insert(&mut tape, &gen.norm_stats);
            let mut dropout = stream(16, "dropout");
            build_generator_objective(
                &mut tape,
                &gen_nodes,
                &disc_nodes,
                &norm,
                &gen,
                &disc,
                &seeds,
                &noise,
                GeneratorObjective::Saturating,
                cfg.clamp_eps,
                &mut dropout,
            )
            .unwrap()
            .2
        };
        let disc_values: Vec<Tensor> = disc.params().iter().map(|p| p.value.clone()).collect();
        let report = grad_check(&disc_values, 1e-5, |tape, ids| {
            let disc_nodes = DiscriminatorNodes {
                c1_k: ids[0],
                c1_b: ids[1],
                c2_k: ids[2],
                c2_b: ids[3],
                c3_k: ids[4],
                c3_b: ids[5],
                dense_w: ids[6],
                dense_b: ids[7],
            };
            let norm = NormNodes::insert(tape, &disc.norm_stats);
            let mut dropout = stream(17, "dropout");
            let (jd, _, _) = build_discriminator_objective(
                tape,
                &disc_nodes,
                &norm,
                &disc,
                &real,
                &fake,
                cfg.clamp_eps,
                &mut dropout,
            )?;
            Ok(jd)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "J_D rel err {}", report.max_rel_err);
    }
}
