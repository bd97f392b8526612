//! Flat project configuration.
//!
//! One TOML document of plain keys covers the synthetic dynamics, the model
//! topology, training, sampling, and analysis. Unknown keys are a hard
//! error so typos cannot silently fall back to defaults; every key has a
//! default, so an empty file (or no file) is a valid configuration.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use trajgan_core::discriminator::{ConvSpec, DiscriminatorConfig};
use trajgan_core::generator::GeneratorConfig;
use trajgan_core::synth::{ComponentLangevin, LangevinConfig};
use trajgan_core::trainer::{EarlyStopConfig, GeneratorObjective, TrainConfig};
use trajgan_core::Activation;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectConfig {
    /// Root seed; every random stream in the pipeline derives from it.
    pub seed: u64,
    /// Sampling interval in seconds.
    pub dt: f64,

    // Synthetic ground truth (underdamped Langevin per component).
    pub synth_steps: usize,
    pub synth_n_traj: usize,
    pub r_damping: f64,
    pub r_stiffness: f64,
    pub r_noise: f64,
    pub r_equilibrium: f64,
    pub theta_damping: f64,
    pub theta_stiffness: f64,
    pub theta_noise: f64,
    pub theta_equilibrium: f64,
    pub z_damping: f64,
    pub z_stiffness: f64,
    pub z_noise: f64,
    pub z_equilibrium: f64,

    // Generator topology.
    pub history_k: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Hidden activation: tanh, elu, sigmoid, softplus, or identity.
    pub phi: String,

    // Discriminator topology.
    pub segment_len: usize,
    pub disc_channels: Vec<usize>,
    pub disc_widths: Vec<usize>,
    pub disc_strides: Vec<usize>,
    pub dropout_rate: f64,

    // Training.
    pub epochs: usize,
    pub inner_steps: usize,
    pub minibatch_m: usize,
    pub lr: f64,
    /// Per-network learning-rate overrides; fall back to `lr` when absent.
    pub lr_gen: Option<f64>,
    pub lr_disc: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clamp_eps: f64,
    /// "saturating" (descend log(1-D)) or "non_saturating" (descend -log D).
    pub generator_objective: String,
    pub early_stop: bool,
    pub early_stop_window: usize,
    pub early_stop_jd_tol: f64,
    pub early_stop_gap_tol: f64,
    pub early_stop_patience: usize,
    /// Periodic checkpoint interval in epochs; 0 disables periodic saves.
    pub checkpoint_every: usize,

    // Sampling.
    pub sample_iterations: usize,
    pub segment_new: usize,
    pub sample_n_traj: usize,

    // Analysis.
    /// 0 selects the maximum admissible lag (length - 2).
    pub msd_max_lag: usize,
    pub gamma_window: usize,
    pub msd_dense_below: usize,
    pub msd_points_per_decade: usize,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            seed: 42,
            dt: 0.00476,
            synth_steps: 1100,
            synth_n_traj: 15,
            r_damping: 21.0,
            r_stiffness: 200.0,
            r_noise: 16_800.0,
            r_equilibrium: 25.0,
            theta_damping: 21.0,
            theta_stiffness: 0.0,
            theta_noise: 60.0,
            theta_equilibrium: 0.0,
            z_damping: 21.0,
            z_stiffness: 200.0,
            z_noise: 16_800.0,
            z_equilibrium: 50.0,
            history_k: 10,
            hidden1: 64,
            hidden2: 64,
            phi: "tanh".to_string(),
            segment_len: 100,
            disc_channels: vec![16, 32, 64],
            disc_widths: vec![5, 5, 3],
            disc_strides: vec![2, 2, 2],
            dropout_rate: 0.5,
            epochs: 5000,
            inner_steps: 10,
            minibatch_m: 15,
            lr: 1e-4,
            lr_gen: None,
            lr_disc: None,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            clamp_eps: 1e-7,
            generator_objective: "saturating".to_string(),
            early_stop: true,
            early_stop_window: 50,
            early_stop_jd_tol: 0.05,
            early_stop_gap_tol: 0.1,
            early_stop_patience: 1,
            checkpoint_every: 500,
            sample_iterations: 11,
            segment_new: 100,
            sample_n_traj: 15,
            msd_max_lag: 0,
            gamma_window: 7,
            msd_dense_below: 20,
            msd_points_per_decade: 16,
        }
    }
}

impl ProjectConfig {
    /// Load from a TOML file; `None` yields the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => ProjectConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("invalid config {}", p.display()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.disc_channels.len() != 3
            || self.disc_widths.len() != 3
            || self.disc_strides.len() != 3
        {
            bail!("disc_channels, disc_widths, disc_strides must each list 3 stages");
        }
        self.activation()?;
        self.objective()?;
        if !(self.dt > 0.0) {
            bail!("dt must be positive, got {}", self.dt);
        }
        Ok(())
    }

    pub fn activation(&self) -> Result<Activation> {
        Activation::from_name(&self.phi)
            .with_context(|| format!("unknown activation {:?} (tanh, elu, sigmoid, softplus, identity)", self.phi))
    }

    pub fn objective(&self) -> Result<GeneratorObjective> {
        match self.generator_objective.as_str() {
            "saturating" => Ok(GeneratorObjective::Saturating),
            "non_saturating" => Ok(GeneratorObjective::NonSaturating),
            other => bail!("unknown generator_objective {other:?} (saturating, non_saturating)"),
        }
    }

    pub fn langevin(&self) -> LangevinConfig {
        LangevinConfig {
            r: ComponentLangevin {
                damping: self.r_damping,
                stiffness: self.r_stiffness,
                noise: self.r_noise,
                equilibrium: self.r_equilibrium,
            },
            theta: ComponentLangevin {
                damping: self.theta_damping,
                stiffness: self.theta_stiffness,
                noise: self.theta_noise,
                equilibrium: self.theta_equilibrium,
            },
            z: ComponentLangevin {
                damping: self.z_damping,
                stiffness: self.z_stiffness,
                noise: self.z_noise,
                equilibrium: self.z_equilibrium,
            },
            dt: self.dt,
            steps: self.synth_steps,
            n_traj: self.synth_n_traj,
            seed: self.seed,
        }
    }

    pub fn generator(&self) -> Result<GeneratorConfig> {
        Ok(GeneratorConfig {
            k: self.history_k,
            h1: self.hidden1,
            h2: self.hidden2,
            phi: self.activation()?,
        })
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        let conv: [ConvSpec; 3] = std::array::from_fn(|i| ConvSpec {
            channels_out: self.disc_channels[i],
            width: self.disc_widths[i],
            stride: self.disc_strides[i],
        });
        DiscriminatorConfig {
            segment_len: self.segment_len,
            conv,
            dropout_rate: self.dropout_rate,
        }
    }

    pub fn train(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            inner_steps: self.inner_steps,
            minibatch_m: self.minibatch_m,
            segment_len: self.segment_len,
            lr: self.lr,
            lr_gen: self.lr_gen,
            lr_disc: self.lr_disc,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            clamp_eps: self.clamp_eps,
            objective: self.objective()?,
            early_stop: EarlyStopConfig {
                enabled: self.early_stop,
                window: self.early_stop_window,
                jd_tol: self.early_stop_jd_tol,
                gap_tol: self.early_stop_gap_tol,
                patience: self.early_stop_patience,
            },
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ProjectConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ProjectConfig>("seeed = 1\n").unwrap_err();
        assert!(err.to_string().contains("seeed"), "{err}");
    }

    #[test]
    fn partial_files_fall_back_to_defaults() {
        let cfg: ProjectConfig = toml::from_str("seed = 7\nepochs = 3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.segment_len, 100);
        assert!(cfg.lr_gen.is_none());
    }

    #[test]
    fn bad_activation_is_rejected() {
        let cfg: ProjectConfig = toml::from_str("phi = \"relu\"\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
