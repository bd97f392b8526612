use crate::error::{Error, Result};

/// One particle position in cylindrical coordinates. `theta` is cumulative
/// (never reduced modulo 2*pi).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coordinate {
    pub r: f64,
    pub theta: f64,
    pub z: f64,
}

impl Coordinate {
    pub fn new(r: f64, theta: f64, z: f64) -> Self {
        Coordinate { r, theta, z }
    }

    pub fn component(&self, c: Component) -> f64 {
        match c {
            Component::R => self.r,
            Component::Theta => self.theta,
            Component::Z => self.z,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.r, self.theta, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Coordinate::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.r.is_finite() && self.theta.is_finite() && self.z.is_finite()
    }
}

/// Coordinate component selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    R,
    Theta,
    Z,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::R, Component::Theta, Component::Z];

    pub fn name(self) -> &'static str {
        match self {
            Component::R => "r",
            Component::Theta => "theta",
            Component::Z => "z",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Component::R => 0,
            Component::Theta => 1,
            Component::Z => 2,
        }
    }
}

/// Uniformly sampled particle path.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    coords: Vec<Coordinate>,
    dt: f64,
}

impl Trajectory {
    pub fn new(coords: Vec<Coordinate>, dt: f64) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::invalid(
                "Trajectory::new",
                format!("need at least 2 coordinates, got {}", coords.len()),
            ));
        }
        if !(dt > 0.0) {
            return Err(Error::invalid("Trajectory::new", format!("dt must be positive, got {dt}")));
        }
        Ok(Trajectory { coords, dt })
    }

    pub fn coords(&self) -> &[Coordinate] {
        &self.coords
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// One component as a plain series.
    pub fn series(&self, c: Component) -> Vec<f64> {
        self.coords.iter().map(|y| y.component(c)).collect()
    }

    /// Contiguous window `[start, start + len)` as a new trajectory.
    pub fn window(&self, start: usize, len: usize) -> Result<Trajectory> {
        if start + len > self.coords.len() {
            return Err(Error::invalid(
                "Trajectory::window",
                format!(
                    "window [{start}, {}) out of range for length {}",
                    start + len,
                    self.coords.len()
                ),
            ));
        }
        Trajectory::new(self.coords[start..start + len].to_vec(), self.dt)
    }
}

/// Per-component mean and standard deviation used to standardize
/// coordinates before they enter a network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormStats {
    /// Identity transform.
    pub fn unit() -> Self {
        NormStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    /// Pooled statistics over every coordinate of every trajectory.
    pub fn from_dataset(trajs: &[Trajectory]) -> Result<Self> {
        let n: usize = trajs.iter().map(Trajectory::len).sum();
        if n == 0 {
            return Err(Error::invalid("NormStats::from_dataset", "empty dataset"));
        }
        let mut mean = [0.0; 3];
        for t in trajs {
            for y in t.coords() {
                for (m, v) in mean.iter_mut().zip(y.to_array()) {
                    *m += v;
                }
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = [0.0; 3];
        for t in trajs {
            for y in t.coords() {
                for (s, (v, m)) in var.iter_mut().zip(y.to_array().into_iter().zip(mean)) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let mut std = [0.0; 3];
        for (s, v) in std.iter_mut().zip(var) {
            *s = (v / n as f64).sqrt();
        }
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid(
                "NormStats::from_dataset",
                format!("zero variance component; std = {std:?}"),
            ));
        }
        Ok(NormStats { mean, std })
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid(
                "NormStats",
                format!("mean {:?}, std {:?}", self.mean, self.std),
            ));
        }
        Ok(())
    }

    pub fn standardize(&self, y: Coordinate) -> [f64; 3] {
        [
            (y.r - self.mean[0]) / self.std[0],
            (y.theta - self.mean[1]) / self.std[1],
            (y.z - self.mean[2]) / self.std[2],
        ]
    }

    /// Map an increment from standardized space back to raw units. Increments
    /// scale by the component deviation; the mean shift cancels in differences.
    pub fn unstandardize_increment(&self, d: [f64; 3]) -> [f64; 3] {
        [d[0] * self.std[0], d[1] * self.std[1], d[2] * self.std[2]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coord(v: f64) -> Coordinate {
        Coordinate::new(v, 2.0 * v, -v)
    }

    #[test]
    fn trajectory_invariants() {
        assert!(Trajectory::new(vec![coord(0.0)], 0.1).is_err());
        assert!(Trajectory::new(vec![coord(0.0), coord(1.0)], 0.0).is_err());
        assert!(Trajectory::new(vec![coord(0.0), coord(1.0)], 0.1).is_ok());
    }

    #[test]
    fn norm_stats_standardize_roundtrip() {
        let trajs = vec![
            Trajectory::new((0..50).map(|i| coord(i as f64)).collect(), 0.1).unwrap(),
            Trajectory::new((0..50).map(|i| coord(i as f64 + 5.0)).collect(), 0.1).unwrap(),
        ];
        let stats = NormStats::from_dataset(&trajs).unwrap();
        let y = coord(7.0);
        let s = stats.standardize(y);
        let back = [
            s[0] * stats.std[0] + stats.mean[0],
            s[1] * stats.std[1] + stats.mean[1],
            s[2] * stats.std[2] + stats.mean[2],
        ];
        for (b, v) in back.iter().zip(y.to_array()) {
            assert!((b - v).abs() < 1e-12);
        }
        // zero increment stays zero through the inverse map
        assert_eq!(stats.unstandardize_increment([0.0; 3]), [0.0; 3]);
    }

    #[test]
    fn constant_dataset_is_rejected() {
        let trajs = vec![Trajectory::new(vec![coord(1.0); 10], 0.1).unwrap()];
        assert!(NormStats::from_dataset(&trajs).is_err());
    }
}
