//! A finite random system placed on the integers of R¹.

use rand::{Rng, RngCore};

use super::cells::PartitionSpec;
use crate::error::{PesinError, Result};
use crate::linalg::{Hessian, Matrix, Vector};
use crate::partition::{FiniteMeasure, FiniteRds};
use crate::rds::{AnalyticMeasure, DerivOrder, DiffeoFamily, MapEval, Params};

/// `x -> T(r) + κ (x - r)` with `r` the nearest state to `x` and `T` a map
/// table drawn from the finite system's law.
///
/// Each state's unit interval is squeezed by `κ` onto a neighbourhood of its
/// image, so the box partition with one cell per state codes orbits exactly
/// like the finite system. The map is piecewise affine rather than a
/// diffeomorphism of R when `T` is not increasing.
#[derive(Debug, Clone)]
pub struct EmbeddedFiniteRds {
    rds: FiniteRds,
    kappa: f64,
}

impl EmbeddedFiniteRds {
    pub fn new(rds: FiniteRds, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(PesinError::InvalidInput("κ must lie in (0, 1)".into()));
        }
        Ok(Self { rds, kappa })
    }

    pub fn rds(&self) -> &FiniteRds {
        &self.rds
    }

    /// One cell per state: `g = |X|` boxes of width 1 centered at the integers.
    pub fn partition(&self) -> PartitionSpec {
        let s = self.rds.states();
        PartitionSpec::new(vec![(s as f64 - 1.0) / 2.0], s as f64 / 2.0, s)
            .expect("at least one state")
    }

    fn nearest(&self, x: f64) -> usize {
        x.round().clamp(0.0, self.rds.states() as f64 - 1.0) as usize
    }
}

impl DiffeoFamily for EmbeddedFiniteRds {
    fn dim(&self) -> usize {
        1
    }

    fn name(&self) -> String {
        "embedded_finite".into()
    }

    fn sample_params(&self, rng: &mut dyn RngCore) -> Params {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let last = self.rds.map_count() - 1;
        for (i, p) in self.rds.probs().iter().enumerate() {
            acc += p;
            if u < acc {
                return vec![i as f64];
            }
        }
        vec![last as f64]
    }

    fn eval(&self, theta: &[f64], x: &Vector, order: DerivOrder) -> Result<MapEval> {
        let i = theta.first().copied().unwrap_or(-1.0);
        if !(i >= 0.0 && (i as usize) < self.rds.map_count() && i.fract() == 0.0) {
            return Err(PesinError::InvalidInput(format!("no map table with index {i}")));
        }
        if x.len() != 1 {
            return Err(PesinError::Dimension("embedded system lives in R¹".into()));
        }
        let r = self.nearest(x[0]);
        let image = self.rds.map(i as usize)[r] as f64 + self.kappa * (x[0] - r as f64);
        Ok(MapEval {
            image: Vector::from_element(1, image),
            jacobian: (order >= DerivOrder::First).then(|| Matrix::from_element(1, 1, self.kappa)),
            hessian: (order >= DerivOrder::Second).then(|| Hessian::zeros(1, 1)),
        })
    }

    fn inverse(&self, _theta: &[f64], _y: &Vector) -> Result<Vector> {
        Err(PesinError::Capability(
            "the embedded finite system is not invertible".into(),
        ))
    }
}

/// State `i` with probability `μ_i`, jittered uniformly within `±width/2`.
#[derive(Debug, Clone)]
pub struct LatticeMeasure {
    weights: Vec<f64>,
    width: f64,
}

impl LatticeMeasure {
    pub fn new(mu: &FiniteMeasure, width: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&width) {
            return Err(PesinError::InvalidInput("jitter width must lie in [0, 1)".into()));
        }
        Ok(Self {
            weights: mu.weights().to_vec(),
            width,
        })
    }
}

impl AnalyticMeasure for LatticeMeasure {
    fn dim(&self) -> usize {
        1
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vector {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut state = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                state = i;
                break;
            }
        }
        let jitter: f64 = rng.random::<f64>() - 0.5;
        Vector::from_element(1, state as f64 + self.width * jitter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::curve::{entropy_curve, BiasCorrection};
    use crate::partition::{kifer_n_step, FinitePartition};
    use crate::rds::MeasureRepr;
    use crate::rng::StreamKey;

    #[test]
    fn codes_follow_the_finite_system() {
        let rds = FiniteRds::new(3, vec![vec![2, 0, 1], vec![1, 1, 0]], vec![0.5, 0.5]).unwrap();
        let fam = EmbeddedFiniteRds::new(rds, 0.1).unwrap();
        let xi = fam.partition();
        for (theta, x, cell) in [(0.0, 0.2, 2), (1.0, 1.3, 1), (1.0, 2.1, 0)] {
            let y = fam.apply(&[theta], &Vector::from_element(1, x)).unwrap();
            assert_eq!(xi.cell(y.as_slice()), cell);
        }
    }

    #[test]
    fn monte_carlo_matches_exact_enumeration() {
        let rds = FiniteRds::new(4, vec![vec![1, 2, 3, 0], vec![0, 0, 2, 2], vec![3, 1, 1, 0]], vec![0.5, 0.3, 0.2])
            .unwrap();
        let mu = FiniteMeasure::uniform(4);
        let fam = EmbeddedFiniteRds::new(rds.clone(), 0.1).unwrap();
        let measure = MeasureRepr::analytic(LatticeMeasure::new(&mu, 0.5).unwrap());
        let curve = entropy_curve(
            &fam,
            &measure,
            &fam.partition(),
            4,
            64,
            2000,
            BiasCorrection::MillerMadow,
            StreamKey::new(77, 0),
        )
        .unwrap();
        for p in &curve.points {
            let exact = p.n as f64 * kifer_n_step(&rds, &FinitePartition::discrete(4), &mu, p.n).unwrap();
            assert!((p.h - exact).abs() < 3.0 * p.se, "n={} {} vs {} ± {}", p.n, p.h, exact, p.se);
        }
    }
}
