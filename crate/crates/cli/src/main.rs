mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::ProjectConfig;
use trajgan_core::discriminator::DiscriminatorParams;
use trajgan_core::generator::{extend_trajectory, GeneratorParams};
use trajgan_core::gradcheck::standard_suite;
use trajgan_core::io;
use trajgan_core::rng::{stream, substream};
use trajgan_core::stats;
use trajgan_core::synth;
use trajgan_core::trainer::{self, StopReason};
use trajgan_core::trajectory::{Component, NormStats, Trajectory};

/// Adversarial trajectory simulation pipeline.
#[derive(Parser)]
#[command(name = "trajgan", version, about)]
struct Cli {
    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the synthetic ground-truth ensemble and write a trajectory CSV.
    Synth {
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the adversarial pair on a trajectory CSV.
    ///
    /// Exit code 0 = ran all epochs, 3 = early-stopped, 2 = aborted on a
    /// non-finite loss.
    Train {
        /// Training data CSV.
        #[arg(long)]
        data: PathBuf,
        /// Directory for checkpoints and the loss log.
        #[arg(long)]
        ckpt_dir: PathBuf,
    },
    /// Sample trajectories from a trained checkpoint.
    Sample {
        /// Checkpoint file.
        #[arg(long)]
        ckpt: PathBuf,
        /// Ground-truth CSV supplying the k-coordinate seeds (cycled).
        #[arg(long)]
        data: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Trajectories to generate (default from config).
        #[arg(long)]
        n_traj: Option<usize>,
        /// Generator iterations per trajectory (default from config).
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Compute MSD, scaling-exponent, velocity, and self-correlation tables.
    Analyze {
        /// Input trajectory CSV.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the analysis CSVs.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a generated set against a truth set.
    Score {
        /// Ground-truth CSV.
        #[arg(long)]
        truth: PathBuf,
        /// Generated CSV.
        #[arg(long)]
        generated: PathBuf,
        /// Output path for the score summary; the cross-correlation matrix
        /// lands next to it with a `_matrix` suffix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gradient validation suite and print worst relative errors.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = ProjectConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Synth { out } => cmd_synth(&cfg, &out),
        Command::Train { data, ckpt_dir } => cmd_train(&cfg, &data, &ckpt_dir),
        Command::Sample {
            ckpt,
            data,
            out,
            n_traj,
            iterations,
        } => cmd_sample(&cfg, &ckpt, &data, &out, n_traj, iterations),
        Command::Analyze { data, out_dir } => cmd_analyze(&cfg, &data, &out_dir),
        Command::Score {
            truth,
            generated,
            out,
        } => cmd_score(&cfg, &truth, &generated, &out),
        Command::Gradcheck => cmd_gradcheck(),
    }
}

fn component_summary(trajs: &[Trajectory], c: Component) -> (f64, f64) {
    let mut acc = 0.0;
    let mut count = 0usize;
    for t in trajs {
        for v in t.series(c) {
            acc += v;
            count += 1;
        }
    }
    let mean = acc / count as f64;
    let mut var = 0.0;
    for t in trajs {
        for v in t.series(c) {
            var += (v - mean) * (v - mean);
        }
    }
    (mean, (var / count as f64).sqrt())
}

fn cmd_synth(cfg: &ProjectConfig, out: &Path) -> Result<ExitCode> {
    let trajs = synth::simulate(&cfg.langevin())?;
    io::write_trajectories(out, &trajs)?;
    println!(
        "wrote {} trajectories x {} steps to {}",
        trajs.len(),
        trajs[0].len(),
        out.display()
    );
    for c in Component::ALL {
        let (mean, std) = component_summary(&trajs, c);
        println!("  {:<5} mean {:>12.6}  std {:>12.6}", c.name(), mean, std);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(cfg: &ProjectConfig, data: &Path, ckpt_dir: &Path) -> Result<ExitCode> {
    let dataset = io::read_trajectories(data, cfg.dt)?;
    let stats = NormStats::from_dataset(&dataset)?;
    let mut gen = GeneratorParams::init(cfg.generator()?, stats, &mut stream(cfg.seed, "gen-init"))?;
    let mut disc =
        DiscriminatorParams::init(cfg.discriminator(), stats, &mut stream(cfg.seed, "disc-init"))?;

    std::fs::create_dir_all(ckpt_dir)
        .with_context(|| format!("cannot create {}", ckpt_dir.display()))?;
    io::write_checkpoint(&ckpt_dir.join("initial.txt"), &gen, &disc)?;

    let train_cfg = cfg.train()?;
    let every = cfg.checkpoint_every;
    let outcome = trainer::train(&dataset, &mut gen, &mut disc, &train_cfg, |record, g, d| {
        if every > 0 && (record.epoch + 1) % every == 0 {
            let path = ckpt_dir.join(format!("ckpt_epoch_{:06}.txt", record.epoch + 1));
            io::write_checkpoint(&path, g, d)?;
        }
        Ok(())
    });

    match outcome {
        Ok(outcome) => {
            io::write_loss_records(&ckpt_dir.join("loss.csv"), &outcome.records)?;
            if !outcome.records.is_empty() {
                io::write_checkpoint(&ckpt_dir.join("final.txt"), &gen, &disc)?;
                let last = outcome.records.last().expect("non-empty");
                println!(
                    "epoch {}: J_G {:.4}  J_D {:.4}  D(real) {:.3}  D(fake) {:.3}",
                    last.epoch, last.mean_jg, last.mean_jd, last.mean_d_real, last.mean_d_fake
                );
            }
            match outcome.stop {
                StopReason::CompletedAllEpochs => {
                    println!("training completed after {} epochs", outcome.records.len());
                    Ok(ExitCode::SUCCESS)
                }
                StopReason::EarlyStopped { epoch } => {
                    println!("early stop at epoch {epoch}");
                    Ok(ExitCode::from(3))
                }
            }
        }
        Err(err @ trajgan_core::Error::NonFiniteLoss { .. }) => {
            io::write_loss_records(&ckpt_dir.join("loss.csv"), &[])?;
            eprintln!("aborted: {err}");
            Ok(ExitCode::from(2))
        }
        Err(err) => Err(err.into()),
    }
}

fn cmd_sample(
    cfg: &ProjectConfig,
    ckpt: &Path,
    data: &Path,
    out: &Path,
    n_traj: Option<usize>,
    iterations: Option<usize>,
) -> Result<ExitCode> {
    let (gen, _disc) = io::read_checkpoint(ckpt)?;
    let truth = io::read_trajectories(data, cfg.dt)?;
    let n_traj = n_traj.unwrap_or(cfg.sample_n_traj);
    let iterations = iterations.unwrap_or(cfg.sample_iterations);
    let k = gen.config.k;

    let mut outputs = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        let source = &truth[i % truth.len()];
        if source.len() < k {
            bail!(
                "seed source trajectory {} has {} coordinates, need k = {k}",
                i % truth.len(),
                source.len()
            );
        }
        let seed = &source.coords()[..k];
        let mut rng = substream(cfg.seed, "sample", i as u64);
        let full = extend_trajectory(&gen, seed, iterations, cfg.segment_new, cfg.dt, &mut rng)?;
        // the seed prefix is real data; report only generated coordinates
        let generated = full.window(k, full.len() - k)?;
        outputs.push(generated);
    }
    io::write_trajectories(out, &outputs)?;
    println!(
        "sampled {} trajectories x {} generated steps to {}",
        outputs.len(),
        outputs[0].len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze(cfg: &ProjectConfig, data: &Path, out_dir: &Path) -> Result<ExitCode> {
    let trajs = io::read_trajectories(data, cfg.dt)?;
    let len = trajs[0].len();
    if trajs.iter().any(|t| t.len() != len) {
        bail!("analyze requires equal-length trajectories");
    }
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;

    let max_lag = if cfg.msd_max_lag == 0 {
        len - 2
    } else {
        cfg.msd_max_lag
    };
    let dense = stats::ensemble_msd_of(&trajs, max_lag)?;
    let grid = stats::analysis_lag_grid(max_lag, cfg.msd_dense_below, cfg.msd_points_per_decade);
    let curve = dense.subsample(&grid)?;
    std::fs::write(out_dir.join("msd.csv"), io::msd_to_csv(&curve))?;

    let gamma = stats::scaling_exponent(&curve, cfg.gamma_window)?;
    std::fs::write(out_dir.join("gamma.csv"), io::gamma_to_csv(&gamma))?;

    let fits: Vec<stats::VelocityFit> = Component::ALL
        .into_iter()
        .map(|c| stats::velocity_distribution(&trajs, c))
        .collect::<trajgan_core::Result<_>>()?;
    std::fs::write(out_dir.join("velocity_hist.csv"), io::histograms_to_csv(&fits))?;
    std::fs::write(out_dir.join("velocity_fit.csv"), io::velocity_fits_to_csv(&fits))?;

    match stats::correlation_matrix(&trajs, &trajs) {
        Ok(matrix) => {
            std::fs::write(out_dir.join("selfcorr.csv"), io::matrix_to_csv(&matrix))?;
        }
        Err(err) => {
            // degenerate inputs (constant components) have no correlation
            eprintln!("self-correlation skipped: {err}");
        }
    }
    println!(
        "analyzed {} trajectories x {} steps into {}",
        trajs.len(),
        len,
        out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_score(cfg: &ProjectConfig, truth: &Path, generated: &Path, out: &Path) -> Result<ExitCode> {
    let truth_set = io::read_trajectories(truth, cfg.dt)?;
    let generated_set = io::read_trajectories(generated, cfg.dt)?;
    let report = stats::score_datasets(&truth_set, &generated_set)?;
    std::fs::write(out, io::score_to_csv(&report))?;

    let matrix_path = matrix_sibling(out);
    std::fs::write(&matrix_path, io::matrix_to_csv(&report.matrix))?;
    println!(
        "accuracy {:.4} (eta {:.4})  generalization {:.4} (zeta {:.4})",
        report.accuracy, report.eta_mean, report.generalization, report.zeta_mean
    );
    println!(
        "wrote {} and {}",
        out.display(),
        matrix_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn matrix_sibling(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("score");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    out.with_file_name(format!("{stem}_matrix.{ext}"))
}

fn cmd_gradcheck() -> Result<ExitCode> {
    let threshold = 1e-4;
    let checks = standard_suite(1e-5)?;
    let mut failed = false;
    for check in &checks {
        let ok = check.max_rel_err < threshold;
        failed |= !ok;
        println!(
            "{} {:<32} max rel err {:.3e} over {} coordinates",
            if ok { "PASS" } else { "FAIL" },
            check.name,
            check.max_rel_err,
            check.checked
        );
    }
    if failed {
        eprintln!("gradient checks failed (threshold {threshold:e})");
        return Ok(ExitCode::from(1));
    }
    println!("all {} checks below {threshold:e}", checks.len());
    Ok(ExitCode::SUCCESS)
}
