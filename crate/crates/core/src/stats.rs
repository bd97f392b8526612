//! Trajectory statistics: time-averaged MSD, power-law scaling exponents,
//! velocity distributions, Pearson correlation matrices, and the accuracy /
//! generalization scores built on them.
//!
//! Conventions: a trajectory of `len` coordinates has `N = len - 1` steps
//! and total duration `N * dt`. Lags are integer multiples of `dt`, from 1
//! to at most `N - 1`, so every MSD value averages at least one
//! displacement pair. Theta statistics use the unwrapped (cumulative)
//! angle throughout.

use crate::error::{Error, Result};
use crate::trajectory::{Component, Trajectory};

/// Per-component time-averaged MSD on an explicit lag grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MsdCurve {
    lags: Vec<usize>,
    dt: f64,
    values: [Vec<f64>; 3],
}

impl MsdCurve {
    pub fn new(lags: Vec<usize>, dt: f64, values: [Vec<f64>; 3]) -> Result<Self> {
        if lags.is_empty() || lags[0] == 0 || lags.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "MsdCurve",
                "lags must be strictly increasing and start at 1 or later",
            ));
        }
        if values.iter().any(|v| v.len() != lags.len()) {
            return Err(Error::shape("MsdCurve", "value columns must match the lag grid"));
        }
        if values.iter().flatten().any(|&v| v < 0.0) {
            return Err(Error::invalid("MsdCurve", "MSD values must be non-negative"));
        }
        Ok(MsdCurve { lags, dt, values })
    }

    pub fn lags(&self) -> &[usize] {
        &self.lags
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn lag_seconds(&self) -> Vec<f64> {
        self.lags.iter().map(|&n| n as f64 * self.dt).collect()
    }

    pub fn component(&self, c: Component) -> &[f64] {
        &self.values[c.index()]
    }

    fn check_same_grid(&self, other: &MsdCurve, op: &'static str) -> Result<()> {
        if self.lags != other.lags || self.dt != other.dt {
            return Err(Error::invalid(op, "lag grids differ"));
        }
        Ok(())
    }

    /// Restrict to a subset of the lag grid.
    pub fn subsample(&self, lags: &[usize]) -> Result<MsdCurve> {
        let mut values: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for &lag in lags {
            let pos = self
                .lags
                .binary_search(&lag)
                .map_err(|_| Error::invalid("MsdCurve::subsample", format!("lag {lag} not on grid")))?;
            for (col, out) in self.values.iter().zip(values.iter_mut()) {
                out.push(col[pos]);
            }
        }
        MsdCurve::new(lags.to_vec(), self.dt, values)
    }

    /// Dimensionless 3-d MSD: each component divided by its reference
    /// variance, then summed over r, theta, z.
    pub fn three_dimensional(&self, reference_var: [f64; 3]) -> Result<Vec<f64>> {
        if reference_var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::invalid(
                "MsdCurve::three_dimensional",
                format!("reference variances must be positive, got {reference_var:?}"),
            ));
        }
        Ok((0..self.lags.len())
            .map(|i| {
                self.values
                    .iter()
                    .zip(reference_var)
                    .map(|(col, var)| col[i] / var)
                    .sum()
            })
            .collect())
    }
}

/// Time-averaged MSD of one component at lags `1..=max_lag` (units of dt):
/// `MSD(n) = (1/(N-n)) * sum_{j=0}^{N-n-1} (y[j+n] - y[j])^2` with
/// `N = len - 1` steps, the discrete form of the sliding-window average.
pub fn time_avg_msd(traj: &Trajectory, component: Component, max_lag: usize) -> Result<Vec<f64>> {
    let n_steps = traj.len() - 1;
    if max_lag >= n_steps {
        return Err(Error::invalid(
            "time_avg_msd",
            format!("max_lag {max_lag} must be below the step count {n_steps}"),
        ));
    }
    if max_lag == 0 {
        return Err(Error::invalid("time_avg_msd", "max_lag must be at least 1"));
    }
    let series = traj.series(component);
    let mut out = Vec::with_capacity(max_lag);
    for lag in 1..=max_lag {
        let pairs = n_steps - lag;
        let mut acc = 0.0;
        for j in 0..pairs {
            let d = series[j + lag] - series[j];
            acc += d * d;
        }
        out.push(acc / pairs as f64);
    }
    Ok(out)
}

/// All three components of one trajectory on the dense grid `1..=max_lag`.
pub fn msd_curve(traj: &Trajectory, max_lag: usize) -> Result<MsdCurve> {
    let values = [
        time_avg_msd(traj, Component::R, max_lag)?,
        time_avg_msd(traj, Component::Theta, max_lag)?,
        time_avg_msd(traj, Component::Z, max_lag)?,
    ];
    MsdCurve::new((1..=max_lag).collect(), traj.dt(), values)
}

/// Pointwise arithmetic mean of per-trajectory curves on a shared grid.
pub fn ensemble_msd(curves: &[MsdCurve]) -> Result<MsdCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::invalid("ensemble_msd", "no curves"))?;
    for c in &curves[1..] {
        first.check_same_grid(c, "ensemble_msd")?;
    }
    let n = curves.len() as f64;
    let mut values: [Vec<f64>; 3] = [
        vec![0.0; first.lags.len()],
        vec![0.0; first.lags.len()],
        vec![0.0; first.lags.len()],
    ];
    for c in curves {
        for (col, acc) in c.values.iter().zip(values.iter_mut()) {
            for (a, v) in acc.iter_mut().zip(col) {
                *a += v / n;
            }
        }
    }
    MsdCurve::new(first.lags.clone(), first.dt, values)
}

/// Ensemble MSD of a dataset on the dense grid `1..=max_lag`.
pub fn ensemble_msd_of(trajs: &[Trajectory], max_lag: usize) -> Result<MsdCurve> {
    let curves: Vec<MsdCurve> = trajs
        .iter()
        .map(|t| msd_curve(t, max_lag))
        .collect::<Result<_>>()?;
    ensemble_msd(&curves)
}

/// Integer lag grid for scaling analysis: every lag up to `dense_below`,
/// then log-spaced up to `max_lag`.
pub fn analysis_lag_grid(max_lag: usize, dense_below: usize, points_per_decade: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (1..=dense_below.min(max_lag)).collect();
    if max_lag > dense_below {
        let factor = 10f64.powf(1.0 / points_per_decade.max(1) as f64);
        let mut x = dense_below as f64;
        while *grid.last().expect("grid non-empty") < max_lag {
            x *= factor;
            let lag = (x.round() as usize).min(max_lag);
            if lag > *grid.last().expect("grid non-empty") {
                grid.push(lag);
            }
        }
    }
    grid
}

/// Local power-law exponent of MSD against lag, per component. Entries are
/// `None` where the MSD is not positive or fewer than two usable points
/// fall in the fit window.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaCurve {
    lags: Vec<usize>,
    dt: f64,
    gamma: [Vec<Option<f64>>; 3],
}

impl GammaCurve {
    pub fn lags(&self) -> &[usize] {
        &self.lags
    }

    pub fn lag_seconds(&self) -> Vec<f64> {
        self.lags.iter().map(|&n| n as f64 * self.dt).collect()
    }

    pub fn component(&self, c: Component) -> &[Option<f64>] {
        &self.gamma[c.index()]
    }

    /// Mean exponent over grid entries with lag in `[lo, hi]`; `None` when
    /// nothing is defined there.
    pub fn mean_over_lags(&self, c: Component, lo: usize, hi: usize) -> Option<f64> {
        let mut acc = 0.0;
        let mut count = 0usize;
        for (lag, g) in self.lags.iter().zip(self.gamma[c.index()].iter()) {
            if *lag >= lo && *lag <= hi {
                if let Some(v) = g {
                    acc += v;
                    count += 1;
                }
            }
        }
        (count > 0).then(|| acc / count as f64)
    }
}

fn ls_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Local scaling exponent: the slope of log10 MSD against log10 lag, fit
/// over a centered window of `window` grid points (one-sided at the ends).
pub fn scaling_exponent(msd: &MsdCurve, window: usize) -> Result<GammaCurve> {
    if window < 2 {
        return Err(Error::invalid("scaling_exponent", "window must hold at least 2 points"));
    }
    let n = msd.lags.len();
    let logx: Vec<f64> = msd.lags.iter().map(|&l| (l as f64 * msd.dt).log10()).collect();
    let mut gamma: [Vec<Option<f64>>; 3] = [
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    ];
    for (ci, col) in msd.values.iter().enumerate() {
        for i in 0..n {
            if !(col[i] > 0.0) {
                gamma[ci].push(None);
                continue;
            }
            let half = window / 2;
            let hi = (i.saturating_sub(half) + window).min(n);
            let lo = hi.saturating_sub(window);
            let points: Vec<(f64, f64)> = (lo..hi)
                .filter(|&j| col[j] > 0.0)
                .map(|j| (logx[j], col[j].log10()))
                .collect();
            gamma[ci].push(ls_slope(&points));
        }
    }
    Ok(GammaCurve {
        lags: msd.lags.clone(),
        dt: msd.dt,
        gamma,
    })
}

/// Density histogram plus a least-squares normal fit of pooled velocities.
#[derive(Clone, Debug)]
pub struct VelocityFit {
    pub component: Component,
    /// `bins + 1` edges.
    pub bin_edges: Vec<f64>,
    pub densities: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub residual_norm: f64,
    pub n_samples: usize,
}

impl VelocityFit {
    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }

    /// Integral of the histogram density; 1 up to rounding.
    pub fn density_integral(&self) -> f64 {
        self.bin_edges
            .windows(2)
            .zip(&self.densities)
            .map(|(w, d)| (w[1] - w[0]) * d)
            .sum()
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // Linear interpolation between order statistics.
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn normal_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Least-squares fit of a normal density to (center, density) pairs via
/// damped Gauss-Newton, seeded from the sample moments.
fn fit_normal(points: &[(f64, f64)], mean0: f64, std0: f64) -> (f64, f64, f64) {
    let ssr = |m: f64, s: f64| -> f64 {
        points
            .iter()
            .map(|&(x, d)| {
                let r = normal_density(x, m, s) - d;
                r * r
            })
            .sum()
    };
    let mut mean = mean0;
    let mut std = std0;
    let mut best = ssr(mean, std);
    for _ in 0..100 {
        let mut jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        for &(x, d) in points {
            let rho = normal_density(x, mean, std);
            let z = (x - mean) / std;
            let d_mean = rho * z / std;
            let d_std = rho * (z * z - 1.0) / std;
            let r = rho - d;
            jtj[0][0] += d_mean * d_mean;
            jtj[0][1] += d_mean * d_std;
            jtj[1][1] += d_std * d_std;
            jtr[0] += d_mean * r;
            jtr[1] += d_std * r;
        }
        jtj[1][0] = jtj[0][1];
        let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let mut step = [
            (jtj[1][1] * jtr[0] - jtj[0][1] * jtr[1]) / det,
            (jtj[0][0] * jtr[1] - jtj[1][0] * jtr[0]) / det,
        ];
        let mut improved = false;
        for _ in 0..20 {
            let m_new = mean - step[0];
            let s_new = (std - step[1]).abs().max(1e-12);
            let trial = ssr(m_new, s_new);
            if trial < best {
                mean = m_new;
                std = s_new;
                best = trial;
                improved = true;
                break;
            }
            step[0] *= 0.5;
            step[1] *= 0.5;
        }
        if !improved || (step[0].abs() + step[1].abs()) < 1e-14 {
            break;
        }
    }
    (mean, std, best.sqrt())
}

/// Pool finite-difference velocities of one component over a set of
/// trajectories, histogram them (Freedman-Diaconis bins), and fit a normal
/// density to the (center, density) pairs.
pub fn velocity_distribution(trajs: &[Trajectory], component: Component) -> Result<VelocityFit> {
    let mut pool: Vec<f64> = Vec::new();
    for t in trajs {
        let series = t.series(component);
        for w in series.windows(2) {
            pool.push((w[1] - w[0]) / t.dt());
        }
    }
    if pool.is_empty() {
        return Err(Error::invalid("velocity_distribution", "no velocity samples"));
    }
    let n = pool.len();
    let mean = pool.iter().sum::<f64>() / n as f64;
    let var = pool.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();

    let mut sorted = pool.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite velocities"));
    let (lo, hi) = (sorted[0], sorted[n - 1]);

    let scale = lo.abs().max(hi.abs());
    if std == 0.0 || hi - lo <= scale * 1e-9 {
        // Degenerate pool: every velocity numerically identical; a single
        // bin carries all the mass and the fit collapses onto it.
        let center = 0.5 * (lo + hi);
        let half = f64::max(1e-9, scale * 1e-9);
        return Ok(VelocityFit {
            component,
            bin_edges: vec![center - half, center + half],
            densities: vec![1.0 / (2.0 * half)],
            mean: center,
            std: 0.0,
            residual_norm: 0.0,
            n_samples: n,
        });
    }

    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let fd_width = 2.0 * iqr / (n as f64).cbrt();
    let width = if fd_width > 0.0 {
        fd_width
    } else {
        (hi - lo) / (1.0 + (n as f64).log2())
    };
    let bins = (((hi - lo) / width).ceil() as usize).clamp(1, 2000);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in &pool {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let densities: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / (n as f64 * width))
        .collect();
    let bin_edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();

    let centers: Vec<f64> = bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let points: Vec<(f64, f64)> = centers.into_iter().zip(densities.iter().copied()).collect();
    let (fit_mean, fit_std, residual_norm) = fit_normal(&points, mean, std);

    Ok(VelocityFit {
        component,
        bin_edges,
        densities,
        mean: fit_mean,
        std: fit_std,
        residual_norm,
        n_samples: n,
    })
}

fn pearson_component(a: &[f64], b: &[f64], component: Component) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut sab = 0.0;
    for (x, y) in a.iter().zip(b) {
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
        sab += (x - ma) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::invalid(
            "pearson",
            format!("zero variance in component {}", component.name()),
        ));
    }
    // sqrt(saa*sbb) keeps self-correlation exactly 1: sqrt(x*x) == x in
    // round-to-nearest IEEE arithmetic.
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Mean of the per-component Pearson coefficients between two trajectories
/// of equal length.
pub fn pearson(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(
            "pearson",
            format!("length mismatch: {} vs {}", a.len(), b.len()),
        ));
    }
    let mut acc = 0.0;
    for c in Component::ALL {
        acc += pearson_component(&a.series(c), &b.series(c), c)?;
    }
    Ok(acc / 3.0)
}

/// Matrix of mean Pearson coefficients; entry (i, j) correlates truth i
/// with candidate j.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::shape("CorrelationMatrix", "entry count must equal rows*cols"));
        }
        if entries.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::invalid("CorrelationMatrix", "entries must lie in [-1, 1]"));
        }
        Ok(CorrelationMatrix { rows, cols, entries })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn column_max(&self, j: usize) -> f64 {
        (0..self.rows)
            .map(|i| self.at(i, j))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn correlation_matrix(
    truth: &[Trajectory],
    candidates: &[Trajectory],
) -> Result<CorrelationMatrix> {
    if truth.is_empty() || candidates.is_empty() {
        return Err(Error::invalid("correlation_matrix", "empty trajectory set"));
    }
    let mut entries = Vec::with_capacity(truth.len() * candidates.len());
    for t in truth {
        for c in candidates {
            entries.push(pearson(t, c)?);
        }
    }
    CorrelationMatrix::from_entries(truth.len(), candidates.len(), entries)
}

/// Accuracy from the relative deviation of log10 MSD between two curves.
#[derive(Clone, Debug)]
pub struct AccuracyScore {
    pub accuracy: f64,
    pub eta_mean: f64,
    /// Lags excluded because |log10 MSD| of the reference fell inside the
    /// guard band around zero.
    pub excluded_lags: Vec<usize>,
    pub used_lags: usize,
}

/// Mean relative log-MSD deviation over the common lag grid, on the
/// dimensionless 3-d MSD (components scaled by the reference variance of
/// the truth set, then summed). Lags where the reference log10 magnitude
/// falls below `guard` are excluded and reported.
pub fn accuracy_score(
    truth: &MsdCurve,
    generated: &MsdCurve,
    truth_var: [f64; 3],
    guard: f64,
) -> Result<AccuracyScore> {
    truth.check_same_grid(generated, "accuracy_score")?;
    let a3 = truth.three_dimensional(truth_var)?;
    let b3 = generated.three_dimensional(truth_var)?;
    let mut eta_sum = 0.0;
    let mut used = 0usize;
    let mut excluded = Vec::new();
    for ((&lag, &a), &b) in truth.lags.iter().zip(&a3).zip(&b3) {
        if !(a > 0.0) || !(b > 0.0) {
            return Err(Error::invalid(
                "accuracy_score",
                format!("non-positive 3-d MSD at lag {lag}"),
            ));
        }
        let la = a.log10();
        if la.abs() < guard {
            excluded.push(lag);
            continue;
        }
        eta_sum += (la - b.log10()).abs() / la.abs();
        used += 1;
    }
    if used == 0 {
        return Err(Error::invalid("accuracy_score", "every lag fell inside the guard band"));
    }
    let eta_mean = eta_sum / used as f64;
    Ok(AccuracyScore {
        accuracy: 1.0 - eta_mean,
        eta_mean,
        excluded_lags: excluded,
        used_lags: used,
    })
}

/// Generalization from the column-wise maxima of a correlation matrix:
/// the mean over candidates of each one's best match against the truth set.
pub fn generalization_score(matrix: &CorrelationMatrix) -> (f64, f64) {
    let zeta_mean =
        (0..matrix.cols).map(|j| matrix.column_max(j)).sum::<f64>() / matrix.cols as f64;
    (1.0 - zeta_mean, zeta_mean)
}

/// Full comparison of a generated set against a truth set.
#[derive(Clone, Debug)]
pub struct ScoreReport {
    pub accuracy: f64,
    pub eta_mean: f64,
    pub generalization: f64,
    pub zeta_mean: f64,
    pub matrix: CorrelationMatrix,
    pub truth_msd: MsdCurve,
    pub generated_msd: MsdCurve,
    pub excluded_lags: Vec<usize>,
}

/// Guard band default for [`accuracy_score`].
pub const LOG_MSD_GUARD: f64 = 0.05;

pub fn score_datasets(truth: &[Trajectory], generated: &[Trajectory]) -> Result<ScoreReport> {
    if truth.is_empty() || generated.is_empty() {
        return Err(Error::invalid("score_datasets", "empty trajectory set"));
    }
    let len = truth[0].len();
    if truth.iter().chain(generated.iter()).any(|t| t.len() != len) {
        return Err(Error::invalid(
            "score_datasets",
            "all trajectories must share one length",
        ));
    }
    let max_lag = len - 2;
    let truth_msd = ensemble_msd_of(truth, max_lag)?;
    let generated_msd = ensemble_msd_of(generated, max_lag)?;
    let stats = crate::trajectory::NormStats::from_dataset(truth)?;
    let truth_var = [
        stats.std[0] * stats.std[0],
        stats.std[1] * stats.std[1],
        stats.std[2] * stats.std[2],
    ];
    let acc = accuracy_score(&truth_msd, &generated_msd, truth_var, LOG_MSD_GUARD)?;
    let matrix = correlation_matrix(truth, generated)?;
    let (generalization, zeta_mean) = generalization_score(&matrix);
    Ok(ScoreReport {
        accuracy: acc.accuracy,
        eta_mean: acc.eta_mean,
        generalization,
        zeta_mean,
        matrix,
        truth_msd,
        generated_msd,
        excluded_lags: acc.excluded_lags,
    })
}
