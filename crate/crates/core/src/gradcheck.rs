//! Central finite-difference validation of the tape's backward pass.

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over all checked coordinates.
    pub max_rel_err: f64,
    /// Index of the input tensor holding the worst coordinate.
    pub worst_input: usize,
    /// Flat coordinate within that tensor.
    pub worst_coord: usize,
    /// Total coordinates compared.
    pub checked: usize,
}

/// Relative error with a floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare the tape gradient of a scalar function against central finite
/// differences, coordinate by coordinate.
///
/// `build` constructs the function graph on a fresh tape from leaf nodes
/// holding `inputs`; it must be deterministic (fix any masks or noise
/// outside the closure, or reseed inside it).
pub fn grad_check<F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if h <= 0.0 {
        return Err(Error::invalid("grad_check", format!("step must be positive, got {h}")));
    }

    let evaluate = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &ids)?;
        let v = tape.value(root);
        if v.len() != 1 {
            return Err(Error::invalid(
                "grad_check",
                format!("function must be scalar, got shape {:?}", v.shape()),
            ));
        }
        let y = v.item();
        if !y.is_finite() {
            return Err(Error::non_finite("grad_check function value"));
        }
        Ok(y)
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &ids)?;
    if tape.value(root).len() != 1 {
        return Err(Error::invalid(
            "grad_check",
            format!("function must be scalar, got shape {:?}", tape.value(root).shape()),
        ));
    }
    if !tape.value(root).item().is_finite() {
        return Err(Error::non_finite("grad_check function value"));
    }
    let grads = tape.backward(root)?;
    let analytic: Vec<&Tensor> = ids.iter().map(|&id| &grads[id.index()]).collect();

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_coord: 0,
        checked: 0,
    };
    for (pi, input) in inputs.iter().enumerate() {
        for ci in 0..input.len() {
            let orig = input.data()[ci];
            work[pi].data_mut()[ci] = orig + h;
            let f_plus = evaluate(&work)?;
            work[pi].data_mut()[ci] = orig - h;
            let f_minus = evaluate(&work)?;
            work[pi].data_mut()[ci] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[pi].data()[ci];
            let rel = relative_error(a, numeric);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_input = pi;
                report.worst_coord = ci;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// One named entry of the standard validation suite.
#[derive(Clone, Copy, Debug)]
pub struct NamedCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub checked: usize,
}

/// The full gradient validation suite: dense layers under every activation,
/// the convolution, dropout, the recurrent cell, the whole autoregressive
/// segment, the discriminator (weights and input), and both adversarial
/// objectives end to end. All instances are small and deterministic.
pub fn standard_suite(h: f64) -> Result<Vec<NamedCheck>> {
    use crate::discriminator::{ConvSpec, DiscriminatorConfig, DiscriminatorParams};
    use crate::generator::{
        draw_noise, segment_on_tape, step_on_tape, CoordNode, GeneratorConfig, GeneratorParams,
        NormNodes,
    };
    use crate::rng::stream;
    use crate::tape::{Activation, Mode};
    use crate::trainer::{
        build_discriminator_objective, build_generator_objective, sample_minibatch,
        GeneratorObjective,
    };
    use crate::trajectory::{Coordinate, NormStats, Trajectory};

    let mut out = Vec::new();
    let mut push = |name: &'static str, report: GradCheckReport| {
        out.push(NamedCheck {
            name,
            max_rel_err: report.max_rel_err,
            checked: report.checked,
        });
    };

    // Dense layer under each activation.
    let x = Tensor::vector(vec![0.3, -0.7, 1.1, 0.2]);
    let w = Tensor::new(
        vec![3, 4],
        vec![0.1, -0.2, 0.4, 0.5, 0.3, -0.6, 0.2, -0.1, 0.05, 0.7, -0.4, 0.15],
    )?;
    let b = Tensor::vector(vec![0.05, -0.15, 0.2]);
    for (name, act) in [
        ("fully_connected/tanh", Activation::Tanh),
        ("fully_connected/elu", Activation::Elu),
        ("fully_connected/sigmoid", Activation::Sigmoid),
        ("fully_connected/softplus", Activation::Softplus),
        ("fully_connected/identity", Activation::Identity),
    ] {
        let report = grad_check(&[x.clone(), w.clone(), b.clone()], h, |tape, ids| {
            let y = tape.fully_connected(ids[0], ids[1], ids[2], act)?;
            Ok(tape.mean(y))
        })?;
        push(name, report);
    }

    // Convolution.
    let cx = Tensor::new(
        vec![2, 7],
        vec![0.5, -0.3, 0.8, 0.1, -0.9, 0.4, 0.2, -0.1, 0.6, -0.5, 0.3, 0.7, -0.2, 0.05],
    )?;
    let ck = Tensor::new(
        vec![3, 2, 3],
        (0..18).map(|i| 0.1 * (i as f64 - 9.0) / 9.0 + 0.05).collect(),
    )?;
    let cb = Tensor::vector(vec![0.1, -0.1, 0.02]);
    let report = grad_check(&[cx, ck, cb], h, |tape, ids| {
        let y = tape.conv1d(ids[0], ids[1], ids[2], 2)?;
        let a = tape.activate(y, Activation::Elu);
        Ok(tape.mean(a))
    })?;
    push("conv1d/stride2+elu", report);

    // Dropout through a fixed mask.
    let dx = Tensor::vector(vec![0.4, -0.8, 1.2, 0.3, -0.5, 0.9]);
    let mask = vec![2.0, 0.0, 2.0, 2.0, 0.0, 2.0];
    let report = grad_check(&[dx], h, move |tape, ids| {
        let y = tape.dropout_with_mask(ids[0], mask.clone())?;
        Ok(tape.mean(y))
    })?;
    push("dropout/fixed-mask", report);

    // Shared fixtures for the model-level checks.
    let stats = NormStats {
        mean: [25.0, 0.0, 50.0],
        std: [2.0, 0.5, 2.0],
    };
    let gen_config = GeneratorConfig {
        k: 4,
        h1: 8,
        h2: 8,
        phi: Activation::Tanh,
    };
    let disc_config = DiscriminatorConfig {
        segment_len: 12,
        conv: [
            ConvSpec { channels_out: 4, width: 3, stride: 2 },
            ConvSpec { channels_out: 4, width: 3, stride: 1 },
            ConvSpec { channels_out: 4, width: 2, stride: 1 },
        ],
        dropout_rate: 0.5,
    };
    let mut init_rng = stream(2024, "suite-init");
    let gen = GeneratorParams::init(gen_config, stats, &mut init_rng)?;
    let disc = DiscriminatorParams::init(disc_config.clone(), stats, &mut init_rng)?;
    let seed_coords: Vec<Coordinate> = (0..4)
        .map(|i| Coordinate::new(25.0 + 0.2 * i as f64, 0.03 * i as f64, 50.0 - 0.15 * i as f64))
        .collect();

    let gen_values: Vec<Tensor> = gen.params().iter().map(|p| p.value.clone()).collect();
    let make_nodes = |ids: &[NodeId]| crate::generator::GeneratorNodes {
        w1: ids[0],
        b1: ids[1],
        w2: ids[2],
        b2: ids[3],
        w_mu: ids[4],
        b_mu: ids[5],
        w_sigma: ids[6],
        b_sigma: ids[7],
    };

    // One recurrent cell step.
    let noise1 = [0.7, -1.1, 0.4];
    let report = grad_check(&gen_values, h, |tape, ids| {
        let cell = make_nodes(ids);
        let norm = NormNodes::insert(tape, &stats);
        let history: Vec<CoordNode> = seed_coords
            .iter()
            .rev()
            .map(|&y| CoordNode::constant(tape, &norm, y))
            .collect::<Result<_>>()?;
        let step = step_on_tape(tape, &cell, &norm, &gen_config, &history, noise1)?;
        Ok(tape.mean(step.next.raw))
    })?;
    push("generator/cell-step", report);

    // Whole autoregressive segment.
    let mut noise_rng = stream(2024, "suite-noise");
    let noise = draw_noise(6, &mut noise_rng);
    let report = grad_check(&gen_values, h, |tape, ids| {
        let cell = make_nodes(ids);
        let norm = NormNodes::insert(tape, &stats);
        let coords = segment_on_tape(tape, &cell, &norm, &gen_config, &seed_coords, &noise)?;
        let generated: Vec<NodeId> = coords[4..].iter().map(|c| c.raw).collect();
        let all = tape.concat(&generated)?;
        Ok(tape.mean(all))
    })?;
    push("generator/segment", report);

    // Discriminator log-probability, gradients for weights and input.
    let segment: Vec<Coordinate> = (0..12)
        .map(|i| {
            let t = i as f64 * 0.3;
            Coordinate::new(25.0 + t.sin(), 0.1 * t, 50.0 + t.cos())
        })
        .collect();
    let mut disc_values: Vec<Tensor> = disc.params().iter().map(|p| p.value.clone()).collect();
    for y in &segment {
        disc_values.push(Tensor::vector(vec![y.r, y.theta, y.z]));
    }
    let disc_cfg = disc_config.clone();
    let report = grad_check(&disc_values, h, |tape, ids| {
        let nodes = crate::discriminator::DiscriminatorNodes {
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
            .collect::<Result<_>>()?;
        let mut dropout = stream(2024, "suite-dropout");
        let p = crate::discriminator::discriminate_on_tape(
            tape,
            &nodes,
            &disc_cfg,
            &coords,
            Mode::Train,
            &mut dropout,
        )?;
        let lp = tape.ln(p)?;
        Ok(tape.mean(lp))
    })?;
    push("discriminator/log-d", report);

    // Both adversarial objectives end to end on a tiny minibatch.
    let dataset: Vec<Trajectory> = (0..4)
        .map(|i| {
            let coords = (0..30)
                .map(|t| {
                    let x = t as f64 * 0.25 + i as f64;
                    Coordinate::new(25.0 + x.sin(), 0.05 * x, 50.0 + 0.5 * x.cos())
                })
                .collect();
            Trajectory::new(coords, 0.00476)
        })
        .collect::<Result<_>>()?;
    let mut mb_rng = stream(2024, "suite-minibatch");
    let batch = sample_minibatch(&dataset, 2, 12, &mut mb_rng)?;
    let seeds: Vec<Vec<Coordinate>> = batch.iter().map(|t| t.coords()[..4].to_vec()).collect();
    let mut noise_rng = stream(2025, "suite-noise");
    let batch_noise: Vec<Vec<[f64; 3]>> =
        (0..2).map(|_| draw_noise(8, &mut noise_rng)).collect();

    let report = grad_check(&gen_values, h, |tape, ids| {
        let cell = make_nodes(ids);
        let disc_nodes = disc.leaves(tape);
        let norm = NormNodes::insert(tape, &stats);
        let mut dropout = stream(2026, "suite-dropout");
        let (jg, _, _) = build_generator_objective(
            tape,
            &cell,
            &disc_nodes,
            &norm,
            &gen,
            &disc,
            &seeds,
            &batch_noise,
            GeneratorObjective::Saturating,
            1e-7,
            &mut dropout,
        )?;
        Ok(jg)
    })?;
    push("loss/generator-objective", report);

    let real: Vec<Vec<Coordinate>> = batch.iter().map(|t| t.coords().to_vec()).collect();
    let fakes: Vec<Vec<Coordinate>> = {
        let mut tape = Tape::new();
        let cell = gen.leaves(&mut tape);
        let disc_nodes = disc.leaves(&mut tape);
        let norm = NormNodes::insert(&mut tape, &stats);
        let mut dropout = stream(2027, "suite-dropout");
        build_generator_objective(
            &mut tape,
            &cell,
            &disc_nodes,
            &norm,
            &gen,
            &disc,
            &seeds,
            &batch_noise,
            GeneratorObjective::Saturating,
            1e-7,
            &mut dropout,
        )?
        .2
    };
    let disc_weight_values: Vec<Tensor> = disc.params().iter().map(|p| p.value.clone()).collect();
    let report = grad_check(&disc_weight_values, h, |tape, ids| {
        let nodes = crate::discriminator::DiscriminatorNodes {
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
        let mut dropout = stream(2028, "suite-dropout");
        let (jd, _, _) = build_discriminator_objective(
            tape,
            &nodes,
            &norm,
            &disc,
            &real,
            &fakes,
            1e-7,
            &mut dropout,
        )?;
        Ok(jd)
    })?;
    push("loss/discriminator-objective", report);

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Activation;

    #[test]
    fn quadratic_gradient_is_exact() {
        // f(p) = p^2 at p = 3: analytic 6, central differences exact for
        // polynomials of degree <= 2.
        let p = Tensor::scalar(3.0);
        let report = grad_check(&[p], 1e-5, |tape, ids| {
            let sq = tape.mul(ids[0], ids[0])?;
            Ok(tape.mean(sq))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-10, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let p = Tensor::scalar(1.5);
        let report = grad_check(&[p], 1e-5, |tape, ids| {
            let zero = tape.scale(ids[0], 0.0);
            Ok(tape.add_scalar(zero, 4.0))
        })
        .unwrap();
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn rejects_bad_step() {
        let p = Tensor::scalar(1.0);
        assert!(grad_check(&[p], 0.0, |tape, ids| Ok(tape.mean(ids[0]))).is_err());
    }

    #[test]
    fn rejects_non_finite_function() {
        let p = Tensor::scalar(1.0);
        let err = grad_check(&[p], 1e-5, |tape, ids| {
            let inf = tape.scale(ids[0], f64::INFINITY);
            Ok(tape.mean(inf))
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn detects_corrupted_gradients() {
        // Detector sensitivity: a deliberately wrong analytic value must
        // produce a large relative error.
        let rel = relative_error(6.0, 6.0000001);
        assert!(rel < 1e-6);
        let corrupted = relative_error(6.1, 6.0000001);
        assert!(corrupted > 1e-3);
    }

    #[test]
    fn randomized_small_shapes_pass_for_every_operation() {
        // 100 random trials across the op set, extents capped at 16.
        use crate::rng::stream;
        use rand::Rng;

        let mut rng = stream(314, "prop");
        let randn = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            Tensor::vector((0..n).map(|_| crate::rng::standard_normal(rng)).collect())
        };
        for trial in 0..100 {
            let op = trial % 5;
            let report = match op {
                0 => {
                    // dense layer, random activation
                    let (inp, out) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
                    let x = randn(inp, &mut rng);
                    let w = Tensor::new(
                        vec![out, inp],
                        (0..out * inp)
                            .map(|_| 0.5 * crate::rng::standard_normal(&mut rng))
                            .collect(),
                    )
                    .unwrap();
                    let b = randn(out, &mut rng);
                    let act = [
                        Activation::Tanh,
                        Activation::Elu,
                        Activation::Sigmoid,
                        Activation::Softplus,
                        Activation::Identity,
                    ][(trial / 5) % 5];
                    grad_check(&[x, w, b], 1e-5, |tape, ids| {
                        let y = tape.fully_connected(ids[0], ids[1], ids[2], act)?;
                        Ok(tape.mean(y))
                    })
                    .unwrap()
                }
                1 => {
                    // conv1d with random geometry
                    let c_in = rng.gen_range(1..=3);
                    let c_out = rng.gen_range(1..=3);
                    let len = rng.gen_range(4..=16);
                    let width = rng.gen_range(1..=len.min(4));
                    let stride = rng.gen_range(1..=2);
                    let x = Tensor::new(
                        vec![c_in, len],
                        (0..c_in * len)
                            .map(|_| crate::rng::standard_normal(&mut rng))
                            .collect(),
                    )
                    .unwrap();
                    let k = Tensor::new(
                        vec![c_out, c_in, width],
                        (0..c_out * c_in * width)
                            .map(|_| 0.5 * crate::rng::standard_normal(&mut rng))
                            .collect(),
                    )
                    .unwrap();
                    let b = randn(c_out, &mut rng);
                    grad_check(&[x, k, b], 1e-5, move |tape, ids| {
                        let y = tape.conv1d(ids[0], ids[1], ids[2], stride)?;
                        Ok(tape.mean(y))
                    })
                    .unwrap()
                }
                2 => {
                    // elementwise chain: mul, scale, add_scalar, clamp
                    let n = rng.gen_range(1..=16);
                    let a = randn(n, &mut rng);
                    let b = randn(n, &mut rng);
                    grad_check(&[a, b], 1e-5, |tape, ids| {
                        let prod = tape.mul(ids[0], ids[1])?;
                        let scaled = tape.scale(prod, 0.7);
                        let shifted = tape.add_scalar(scaled, 0.3);
                        let clamped = tape.clamp(shifted, -50.0, 50.0);
                        Ok(tape.mean(clamped))
                    })
                    .unwrap()
                }
                3 => {
                    // softplus then ln (positive domain), through concat
                    let n = rng.gen_range(1..=8);
                    let a = randn(n, &mut rng);
                    let b = randn(n, &mut rng);
                    grad_check(&[a, b], 1e-5, |tape, ids| {
                        let joined = tape.concat(&[ids[0], ids[1]])?;
                        let pos = tape.activate(joined, Activation::Softplus);
                        let shifted = tape.add_scalar(pos, 0.1);
                        let logs = tape.ln(shifted)?;
                        Ok(tape.mean(logs))
                    })
                    .unwrap()
                }
                _ => {
                    // dropout (fixed mask) composed with transpose
                    let rows = rng.gen_range(1..=4);
                    let cols = rng.gen_range(1..=4);
                    let x = randn(rows * cols, &mut rng);
                    let mask: Vec<f64> = (0..rows * cols)
                        .map(|_| if rng.gen::<f64>() < 0.5 { 0.0 } else { 2.0 })
                        .collect();
                    grad_check(&[x], 1e-5, move |tape, ids| {
                        let t = tape.transpose(ids[0], rows, cols)?;
                        let d = tape.dropout_with_mask(t, mask.clone())?;
                        Ok(tape.mean(d))
                    })
                    .unwrap()
                }
            };
            assert!(
                report.max_rel_err < 1e-4,
                "trial {trial}: rel err {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn standard_suite_is_green_and_deterministic() {
        let a = standard_suite(1e-5).unwrap();
        let b = standard_suite(1e-5).unwrap();
        assert_eq!(a.len(), 12);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.max_rel_err, y.max_rel_err);
            assert!(x.max_rel_err < 1e-4, "{}: {}", x.name, x.max_rel_err);
        }
    }

    #[test]
    fn fully_connected_layer_passes() {
        let x = Tensor::vector(vec![0.3, -0.7, 1.1]);
        let w = Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.4, 0.5, 0.3, -0.6]).unwrap();
        let b = Tensor::vector(vec![0.05, -0.15]);
        for act in [
            Activation::Tanh,
            Activation::Elu,
            Activation::Sigmoid,
            Activation::Softplus,
            Activation::Identity,
        ] {
            let report = grad_check(&[x.clone(), w.clone(), b.clone()], 1e-5, |tape, ids| {
                let y = tape.fully_connected(ids[0], ids[1], ids[2], act)?;
                Ok(tape.mean(y))
            })
            .unwrap();
            assert!(
                report.max_rel_err < 1e-7,
                "{}: rel err {}",
                act.name(),
                report.max_rel_err
            );
        }
    }
}
