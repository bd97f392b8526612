//! File formats: trajectory CSV, loss telemetry CSV, analysis CSVs, and
//! the plain-text checkpoint.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! format parses back to bit-identical values and a load/save cycle is
//! byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use crate::discriminator::{ConvSpec, DiscriminatorConfig, DiscriminatorParams};
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, GeneratorParams};
use crate::param::Parameter;
use crate::stats::{CorrelationMatrix, GammaCurve, MsdCurve, ScoreReport, VelocityFit};
use crate::tape::Activation;
use crate::tensor::Tensor;
use crate::trainer::LossRecord;
use crate::trajectory::{Component, Coordinate, NormStats, Trajectory};

pub const TRAJECTORY_HEADER: &str = "traj_id,step,r_mm,theta_rad,z_mm";
pub const LOSS_HEADER: &str = "epoch,mean_JG,mean_JD,mean_D_real,mean_D_fake";
pub const MSD_HEADER: &str = "lag_s,msd_r,msd_theta,msd_z";
pub const GAMMA_HEADER: &str = "lag_s,gamma_r,gamma_theta,gamma_z";
pub const HIST_HEADER: &str = "bin_center,density,component";
pub const VELOCITY_FIT_HEADER: &str = "component,mean,std,residual_norm,n_samples";
pub const SCORE_HEADER: &str = "accuracy,eta_mean,generalization,zeta_mean";
pub const CHECKPOINT_HEADER: &str = "TRAJGAN-CKPT v1";

/// Shortest representation that parses back to the same f64.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn parse_field<T: std::str::FromStr>(
    field: &str,
    what: &str,
    path: &str,
    line: usize,
) -> Result<T> {
    field.parse().map_err(|_| Error::Parse {
        path: path.to_string(),
        line,
        details: format!("cannot parse {what} from {field:?}"),
    })
}

// ---------------------------------------------------------------------------
// Trajectory CSV

pub fn trajectories_to_csv(trajs: &[Trajectory]) -> String {
    let mut out = String::new();
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for (id, t) in trajs.iter().enumerate() {
        for (step, y) in t.coords().iter().enumerate() {
            let _ = writeln!(
                out,
                "{id},{step},{},{},{}",
                fmt_f64(y.r),
                fmt_f64(y.theta),
                fmt_f64(y.z)
            );
        }
    }
    out
}

pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    std::fs::write(path, trajectories_to_csv(trajs))?;
    Ok(())
}

/// Parse a trajectory CSV. Ids must be contiguous from 0 and steps must
/// count up from 0 within each trajectory; violations name the line.
pub fn trajectories_from_csv(text: &str, dt: f64, path: &str) -> Result<Vec<Trajectory>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == TRAJECTORY_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 1,
                details: format!("expected header {TRAJECTORY_HEADER:?}, got {header:?}"),
            })
        }
        None => {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 1,
                details: "empty file".to_string(),
            })
        }
    }
    let mut per_traj: Vec<Vec<Coordinate>> = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let row = raw.trim_end();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                path: path.to_string(),
                line: line_no,
                details: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let id: usize = parse_field(fields[0], "traj_id", path, line_no)?;
        let step: usize = parse_field(fields[1], "step", path, line_no)?;
        let r: f64 = parse_field(fields[2], "r_mm", path, line_no)?;
        let theta: f64 = parse_field(fields[3], "theta_rad", path, line_no)?;
        let z: f64 = parse_field(fields[4], "z_mm", path, line_no)?;
        if id == per_traj.len() {
            per_traj.push(Vec::new());
        } else if id + 1 != per_traj.len() {
            return Err(Error::Parse {
                path: path.to_string(),
                line: line_no,
                details: format!("traj_id {id} out of order"),
            });
        }
        let coords = per_traj.last_mut().expect("pushed above");
        if step != coords.len() {
            return Err(Error::Parse {
                path: path.to_string(),
                line: line_no,
                details: format!("step {step} out of order (expected {})", coords.len()),
            });
        }
        coords.push(Coordinate::new(r, theta, z));
    }
    if per_traj.is_empty() {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 1,
            details: "no data rows".to_string(),
        });
    }
    per_traj
        .into_iter()
        .map(|coords| Trajectory::new(coords, dt))
        .collect()
}

pub fn read_trajectories(path: &Path, dt: f64) -> Result<Vec<Trajectory>> {
    let text = std::fs::read_to_string(path)?;
    trajectories_from_csv(&text, dt, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// Loss telemetry CSV

pub fn loss_records_to_csv(records: &[LossRecord]) -> String {
    let mut out = String::new();
    out.push_str(LOSS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            fmt_f64(r.mean_jg),
            fmt_f64(r.mean_jd),
            fmt_f64(r.mean_d_real),
            fmt_f64(r.mean_d_fake)
        );
    }
    out
}

pub fn write_loss_records(path: &Path, records: &[LossRecord]) -> Result<()> {
    std::fs::write(path, loss_records_to_csv(records))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Analysis CSVs

pub fn msd_to_csv(curve: &MsdCurve) -> String {
    let mut out = String::new();
    out.push_str(MSD_HEADER);
    out.push('\n');
    let secs = curve.lag_seconds();
    let r = curve.component(Component::R);
    let t = curve.component(Component::Theta);
    let z = curve.component(Component::Z);
    for i in 0..secs.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(secs[i]),
            fmt_f64(r[i]),
            fmt_f64(t[i]),
            fmt_f64(z[i])
        );
    }
    out
}

pub fn gamma_to_csv(curve: &GammaCurve) -> String {
    let mut out = String::new();
    out.push_str(GAMMA_HEADER);
    out.push('\n');
    let secs = curve.lag_seconds();
    let fmt_entry = |g: &Option<f64>| match g {
        Some(v) => fmt_f64(*v),
        None => "nan".to_string(),
    };
    let r = curve.component(Component::R);
    let t = curve.component(Component::Theta);
    let z = curve.component(Component::Z);
    for i in 0..secs.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(secs[i]),
            fmt_entry(&r[i]),
            fmt_entry(&t[i]),
            fmt_entry(&z[i])
        );
    }
    out
}

pub fn histograms_to_csv(fits: &[VelocityFit]) -> String {
    let mut out = String::new();
    out.push_str(HIST_HEADER);
    out.push('\n');
    for fit in fits {
        for (center, density) in fit.bin_centers().iter().zip(&fit.densities) {
            let _ = writeln!(
                out,
                "{},{},{}",
                fmt_f64(*center),
                fmt_f64(*density),
                fit.component.name()
            );
        }
    }
    out
}

pub fn velocity_fits_to_csv(fits: &[VelocityFit]) -> String {
    let mut out = String::new();
    out.push_str(VELOCITY_FIT_HEADER);
    out.push('\n');
    for fit in fits {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fit.component.name(),
            fmt_f64(fit.mean),
            fmt_f64(fit.std),
            fmt_f64(fit.residual_norm),
            fit.n_samples
        );
    }
    out
}

/// Plain numeric grid, one matrix row per line.
pub fn matrix_to_csv(matrix: &CorrelationMatrix) -> String {
    let mut out = String::new();
    for i in 0..matrix.rows() {
        let row: Vec<String> = (0..matrix.cols()).map(|j| fmt_f64(matrix.at(i, j))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn score_to_csv(report: &ScoreReport) -> String {
    format!(
        "{SCORE_HEADER}\n{},{},{},{}\n",
        fmt_f64(report.accuracy),
        fmt_f64(report.eta_mean),
        fmt_f64(report.generalization),
        fmt_f64(report.zeta_mean)
    )
}

// ---------------------------------------------------------------------------
// Checkpoint format
//
// One record per tensor: `name d1,d2,... v1 v2 ...` row-major. Scalars ride
// along as shape-[1] tensors, so a checkpoint is self-describing: topology,
// activation, dropout rate, and standardization stats all round-trip.

fn tensor_record(out: &mut String, name: &str, t: &Tensor) {
    let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
    let _ = write!(out, "{name} {}", dims.join(","));
    for v in t.data() {
        let _ = write!(out, " {}", fmt_f64(*v));
    }
    out.push('\n');
}

fn scalar_record(out: &mut String, name: &str, v: f64) {
    tensor_record(out, name, &Tensor::scalar(v));
}

pub fn checkpoint_to_string(gen: &GeneratorParams, disc: &DiscriminatorParams) -> String {
    let mut out = String::new();
    out.push_str(CHECKPOINT_HEADER);
    out.push('\n');
    scalar_record(&mut out, "gen.k", gen.config.k as f64);
    scalar_record(&mut out, "gen.phi", activation_code(gen.config.phi) as f64);
    for (name, p) in GeneratorParams::PARAM_NAMES.iter().zip(gen.params()) {
        tensor_record(&mut out, &format!("gen.{name}"), &p.value);
    }
    tensor_record(
        &mut out,
        "norm.mean",
        &Tensor::vector(gen.norm_stats.mean.to_vec()),
    );
    tensor_record(
        &mut out,
        "norm.std",
        &Tensor::vector(gen.norm_stats.std.to_vec()),
    );
    scalar_record(&mut out, "disc.segment_len", disc.config.segment_len as f64);
    tensor_record(
        &mut out,
        "disc.channels",
        &Tensor::vector(disc.config.conv.iter().map(|c| c.channels_out as f64).collect()),
    );
    tensor_record(
        &mut out,
        "disc.widths",
        &Tensor::vector(disc.config.conv.iter().map(|c| c.width as f64).collect()),
    );
    tensor_record(
        &mut out,
        "disc.strides",
        &Tensor::vector(disc.config.conv.iter().map(|c| c.stride as f64).collect()),
    );
    scalar_record(&mut out, "disc.dropout_rate", disc.config.dropout_rate);
    for (name, p) in DiscriminatorParams::PARAM_NAMES.iter().zip(disc.params()) {
        tensor_record(&mut out, &format!("disc.{name}"), &p.value);
    }
    out
}

pub fn write_checkpoint(path: &Path, gen: &GeneratorParams, disc: &DiscriminatorParams) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(gen, disc))?;
    Ok(())
}

fn activation_code(a: Activation) -> usize {
    match a {
        Activation::Tanh => 0,
        Activation::Elu => 1,
        Activation::Sigmoid => 2,
        Activation::Softplus => 3,
        Activation::Identity => 4,
    }
}

fn activation_from_code(code: usize) -> Option<Activation> {
    Some(match code {
        0 => Activation::Tanh,
        1 => Activation::Elu,
        2 => Activation::Sigmoid,
        3 => Activation::Softplus,
        4 => Activation::Identity,
        _ => return None,
    })
}

struct RecordReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a str,
}

impl<'a> RecordReader<'a> {
    fn next_tensor(&mut self, expected: &str) -> Result<Tensor> {
        let (idx, raw) = self.lines.next().ok_or_else(|| Error::Parse {
            path: self.path.to_string(),
            line: 0,
            details: format!("missing record {expected:?}"),
        })?;
        let line_no = idx + 1;
        let mut fields = raw.split_whitespace();
        let name = fields.next().unwrap_or("");
        if name != expected {
            return Err(Error::Parse {
                path: self.path.to_string(),
                line: line_no,
                details: format!("expected record {expected:?}, found {name:?}"),
            });
        }
        let shape_field = fields.next().ok_or_else(|| Error::Parse {
            path: self.path.to_string(),
            line: line_no,
            details: "missing shape".to_string(),
        })?;
        let shape: Vec<usize> = shape_field
            .split(',')
            .map(|d| parse_field(d, "shape extent", self.path, line_no))
            .collect::<Result<_>>()?;
        let data: Vec<f64> = fields
            .map(|f| parse_field(f, "value", self.path, line_no))
            .collect::<Result<_>>()?;
        Tensor::new(shape, data).map_err(|e| Error::Parse {
            path: self.path.to_string(),
            line: line_no,
            details: e.to_string(),
        })
    }

    fn next_scalar(&mut self, expected: &str) -> Result<f64> {
        let t = self.next_tensor(expected)?;
        if t.len() != 1 {
            return Err(Error::Parse {
                path: self.path.to_string(),
                line: 0,
                details: format!("record {expected:?} must be a scalar"),
            });
        }
        Ok(t.item())
    }

    fn next_usize(&mut self, expected: &str) -> Result<usize> {
        let v = self.next_scalar(expected)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Parse {
                path: self.path.to_string(),
                line: 0,
                details: format!("record {expected:?} must be a non-negative integer, got {v}"),
            });
        }
        Ok(v as usize)
    }
}

pub fn checkpoint_from_string(
    text: &str,
    path: &str,
) -> Result<(GeneratorParams, DiscriminatorParams)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == CHECKPOINT_HEADER => {}
        other => {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 1,
                details: format!(
                    "expected header {CHECKPOINT_HEADER:?}, got {:?}",
                    other.map(|(_, h)| h).unwrap_or("")
                ),
            })
        }
    }
    let mut reader = RecordReader { lines, path };

    let k = reader.next_usize("gen.k")?;
    let phi_code = reader.next_usize("gen.phi")?;
    let phi = activation_from_code(phi_code).ok_or_else(|| Error::Parse {
        path: path.to_string(),
        line: 0,
        details: format!("unknown activation code {phi_code}"),
    })?;
    let mut gen_tensors = Vec::with_capacity(8);
    for name in GeneratorParams::PARAM_NAMES {
        gen_tensors.push(reader.next_tensor(&format!("gen.{name}"))?);
    }
    let mean_t = reader.next_tensor("norm.mean")?;
    let std_t = reader.next_tensor("norm.std")?;
    if mean_t.len() != 3 || std_t.len() != 3 {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 0,
            details: "norm records must have 3 entries".to_string(),
        });
    }
    let norm_stats = NormStats {
        mean: [mean_t.data()[0], mean_t.data()[1], mean_t.data()[2]],
        std: [std_t.data()[0], std_t.data()[1], std_t.data()[2]],
    };

    let (h1, h2) = (gen_tensors[0].shape()[0], gen_tensors[2].shape()[0]);
    let gen_config = GeneratorConfig { k, h1, h2, phi };
    let expected_shapes: [Vec<usize>; 8] = [
        vec![h1, 3 * k],
        vec![h1],
        vec![h2, 3 * k + h1],
        vec![h2],
        vec![3, h2],
        vec![3],
        vec![3, h2],
        vec![3],
    ];
    for ((t, want), name) in gen_tensors
        .iter()
        .zip(&expected_shapes)
        .zip(GeneratorParams::PARAM_NAMES)
    {
        if t.shape() != &want[..] {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 0,
                details: format!(
                    "gen.{name}: shape {:?} inconsistent with k={k}, h1={h1}, h2={h2}",
                    t.shape()
                ),
            });
        }
    }
    let mut gen_iter = gen_tensors.into_iter().map(Parameter::new);
    let gen = GeneratorParams {
        config: gen_config,
        norm_stats,
        w1: gen_iter.next().expect("8 tensors"),
        b1: gen_iter.next().expect("8 tensors"),
        w2: gen_iter.next().expect("8 tensors"),
        b2: gen_iter.next().expect("8 tensors"),
        w_mu: gen_iter.next().expect("8 tensors"),
        b_mu: gen_iter.next().expect("8 tensors"),
        w_sigma: gen_iter.next().expect("8 tensors"),
        b_sigma: gen_iter.next().expect("8 tensors"),
    };
    gen.config.validate().map_err(|e| Error::Parse {
        path: path.to_string(),
        line: 0,
        details: e.to_string(),
    })?;

    let segment_len = reader.next_usize("disc.segment_len")?;
    let channels = reader.next_tensor("disc.channels")?;
    let widths = reader.next_tensor("disc.widths")?;
    let strides = reader.next_tensor("disc.strides")?;
    if channels.len() != 3 || widths.len() != 3 || strides.len() != 3 {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 0,
            details: "disc topology records must have 3 entries".to_string(),
        });
    }
    let conv: [ConvSpec; 3] = std::array::from_fn(|i| ConvSpec {
        channels_out: channels.data()[i] as usize,
        width: widths.data()[i] as usize,
        stride: strides.data()[i] as usize,
    });
    let dropout_rate = reader.next_scalar("disc.dropout_rate")?;
    let disc_config = DiscriminatorConfig {
        segment_len,
        conv,
        dropout_rate,
    };
    disc_config.validate().map_err(|e| Error::Parse {
        path: path.to_string(),
        line: 0,
        details: e.to_string(),
    })?;

    let mut disc_tensors = Vec::with_capacity(8);
    for name in DiscriminatorParams::PARAM_NAMES {
        disc_tensors.push(reader.next_tensor(&format!("disc.{name}"))?);
    }
    let flat = disc_config.flat_features().map_err(|e| Error::Parse {
        path: path.to_string(),
        line: 0,
        details: e.to_string(),
    })?;
    let want_disc: [Vec<usize>; 8] = [
        vec![conv[0].channels_out, 3, conv[0].width],
        vec![conv[0].channels_out],
        vec![conv[1].channels_out, conv[0].channels_out, conv[1].width],
        vec![conv[1].channels_out],
        vec![conv[2].channels_out, conv[1].channels_out, conv[2].width],
        vec![conv[2].channels_out],
        vec![1, flat],
        vec![1],
    ];
    for ((t, want), name) in disc_tensors
        .iter()
        .zip(&want_disc)
        .zip(DiscriminatorParams::PARAM_NAMES)
    {
        if t.shape() != &want[..] {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 0,
                details: format!(
                    "disc.{name}: shape {:?} inconsistent with the recorded topology",
                    t.shape()
                ),
            });
        }
    }
    let mut disc_iter = disc_tensors.into_iter().map(Parameter::new);
    let disc = DiscriminatorParams {
        config: disc_config,
        norm_stats,
        c1_k: disc_iter.next().expect("8 tensors"),
        c1_b: disc_iter.next().expect("8 tensors"),
        c2_k: disc_iter.next().expect("8 tensors"),
        c2_b: disc_iter.next().expect("8 tensors"),
        c3_k: disc_iter.next().expect("8 tensors"),
        c3_b: disc_iter.next().expect("8 tensors"),
        dense_w: disc_iter.next().expect("8 tensors"),
        dense_b: disc_iter.next().expect("8 tensors"),
    };
    Ok((gen, disc))
}

pub fn read_checkpoint(path: &Path) -> Result<(GeneratorParams, DiscriminatorParams)> {
    let text = std::fs::read_to_string(path)?;
    checkpoint_from_string(&text, &path.display().to_string())
}
