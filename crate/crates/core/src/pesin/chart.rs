//! Local stable-manifold charts `h: E → E^⊥` fitted to shooting samples.

use serde::{Deserialize, Serialize};

use super::frames::{l_from_frames, OrbitFrames};
use super::params::{chart_constants, ChartConstants, ChartScales, PesinParams};
use super::regularity::estimate_r;
use super::shoot::Shooter;
use crate::error::{PesinError, Result};
use crate::linalg::{complement, lstsq, op_norm, to_rows, Matrix, Vector};
use crate::rds::{compose, DiffeoFamily, OmegaPrefix};
use crate::rng::{lane, StreamKey};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartOptions {
    /// Total degree of the chart polynomial.
    pub degree: usize,
    /// Candidate points.
    pub samples: usize,
    /// Fewest accepted candidates for a fit.
    pub min_accepted: usize,
    /// Steps of the contraction test.
    pub l_test: usize,
    /// Horizon `L` of the shooting problem that places candidates on the leaf.
    pub shoot_horizon: usize,
    /// Radius `α_0` of the sampled E-ball; `r₀` when absent.
    pub sample_radius: Option<f64>,
    /// Lipschitz cap `β_0` on `h` and `Dh`.
    pub beta0: f64,
    /// Largest contraction constant a candidate may show and still be accepted.
    pub gamma_cap: f64,
    /// Tolerance on `‖Dh(0)‖`.
    pub tangency_tol: f64,
    /// Verify `l ≤ l′` and `r ≤ r′` before fitting.
    pub check_membership: bool,
    pub seed: u64,
}

impl Default for ChartOptions {
    fn default() -> Self {
        Self {
            degree: 3,
            samples: 64,
            min_accepted: 16,
            l_test: 30,
            shoot_horizon: 30,
            sample_radius: None,
            beta0: 2.0,
            gamma_cap: 10.0,
            tangency_tol: 1e-6,
            check_membership: true,
            seed: 0,
        }
    }
}

/// Exponent vectors in `k` variables with total degree `1..=deg`, graded order.
pub fn monomials(k: usize, deg: usize) -> Vec<Vec<u32>> {
    fn rec(k: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == k - 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            rec(k, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    for total in 1..=deg as u32 {
        rec(k, total, &mut Vec::new(), &mut out);
    }
    out
}

fn monomial(c: &Vector, e: &[u32]) -> f64 {
    e.iter().zip(c.iter()).map(|(p, v)| v.powi(*p as i32)).product()
}

/// `∂/∂c_j` of a monomial.
fn monomial_d(c: &Vector, e: &[u32], j: usize) -> f64 {
    if e[j] == 0 {
        return 0.0;
    }
    let mut v = e[j] as f64;
    for (i, (p, x)) in e.iter().zip(c.iter()).enumerate() {
        let p = if i == j { p - 1 } else { *p };
        v *= x.powi(p as i32);
    }
    v
}

fn monomial_dd(c: &Vector, e: &[u32], j: usize, l: usize) -> f64 {
    let mut e2 = e.to_vec();
    if e2[j] == 0 {
        return 0.0;
    }
    let f = e2[j] as f64;
    e2[j] -= 1;
    f * monomial_d(c, &e2, l)
}

#[derive(Debug, Clone)]
pub struct ManifoldChart {
    pub level: usize,
    pub center: Vector,
    /// Orthonormal basis of `E_n`.
    pub e: Matrix,
    /// Orthonormal basis of `E_n^⊥`.
    pub h: Matrix,
    pub monomials: Vec<Vec<u32>>,
    /// Row `j` holds the coefficients of component `j` of `h`.
    pub coeffs: Matrix,
    pub scales: ChartScales,
    pub constants: ChartConstants,
    pub lip_h: f64,
    pub lip_dh: f64,
    /// `‖Dh(0)‖`
    pub tangency: f64,
    /// Largest estimated distance from a chart point to the stable leaf.
    pub residual: f64,
    /// Root mean square misfit of the regression.
    pub fit_rms: f64,
    pub accepted: usize,
    pub candidates: usize,
    /// Largest `|f^l y − f^l x| / (e^{(a+4ε)l} |y − x|)` over accepted points and `l ≤ L_test`.
    pub contraction: f64,
    pub l_test: usize,
    /// Accepted points in ambient coordinates.
    pub points: Vec<Vector>,
}

impl ManifoldChart {
    pub fn stable_dim(&self) -> usize {
        self.e.ncols()
    }

    /// `h(c)` in coordinates of `h`-basis.
    pub fn eval(&self, c: &Vector) -> Vector {
        let feats = Vector::from_iterator(self.monomials.len(), self.monomials.iter().map(|e| monomial(c, e)));
        &self.coeffs * feats
    }

    /// `Dh(c)`, a `(d−k) × k` matrix.
    pub fn derivative(&self, c: &Vector) -> Matrix {
        let k = self.stable_dim();
        Matrix::from_fn(self.coeffs.nrows(), k, |i, j| {
            self.monomials
                .iter()
                .enumerate()
                .map(|(m, e)| self.coeffs[(i, m)] * monomial_d(c, e, j))
                .sum()
        })
    }

    /// Norm of `D²h(c)` (unfolded as in [`crate::linalg::Hessian::norm`]).
    pub fn second_derivative_norm(&self, c: &Vector) -> f64 {
        let k = self.stable_dim();
        let rows = self.coeffs.nrows();
        let m = Matrix::from_fn(rows, k * k, |i, jl| {
            let (j, l) = (jl / k, jl % k);
            self.monomials
                .iter()
                .enumerate()
                .map(|(m, e)| self.coeffs[(i, m)] * monomial_dd(c, e, j, l))
                .sum()
        });
        op_norm(&m)
    }

    /// Ambient point `center + E c + H h(c)`.
    pub fn point(&self, c: &Vector) -> Vector {
        &self.center + &self.e * c + &self.h * self.eval(c)
    }

    /// Coordinates `(E^T v, H^T v)` of `v = y − center`.
    pub fn coords(&self, y: &Vector) -> (Vector, Vector) {
        let v = y - &self.center;
        (self.e.transpose() * &v, self.h.transpose() * &v)
    }

    pub fn export(&self) -> ChartExport {
        ChartExport {
            level: self.level,
            center: self.center.iter().copied().collect(),
            e: to_rows(&self.e),
            h: to_rows(&self.h),
            monomials: self.monomials.clone(),
            coeffs: to_rows(&self.coeffs),
            alpha: self.scales.alpha,
            beta: self.scales.beta,
            gamma: self.scales.gamma,
            residual: self.residual,
            r0: self.constants.r0,
            lip_h: self.lip_h,
            lip_dh: self.lip_dh,
            tangency: self.tangency,
            accepted: self.accepted,
            candidates: self.candidates,
        }
    }
}

/// JSON form of a chart.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChartExport {
    pub level: usize,
    pub center: Vec<f64>,
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub monomials: Vec<Vec<u32>>,
    pub coeffs: Vec<Vec<f64>>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub residual: f64,
    pub r0: f64,
    pub lip_h: f64,
    pub lip_dh: f64,
    pub tangency: f64,
    pub accepted: usize,
    pub candidates: usize,
}

/// Points of the `k`-ball of radius `rad`: a regular grid for `k = 1`, keyed uniform samples otherwise.
fn ball_sample(k: usize, rad: f64, count: usize, key: StreamKey, tag: u64) -> Vec<Vector> {
    if k == 1 {
        return (0..count)
            .map(|i| Vector::from_element(1, rad * (2.0 * (i as f64 + 0.5) / count as f64 - 1.0)))
            .collect();
    }
    let mut rng = key.rng(lane::CHART, tag);
    (0..count)
        .map(|_| loop {
            let v = Vector::from_iterator(k, (0..k).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)));
            if v.norm() <= 1.0 {
                break v * rad;
            }
        })
        .collect()
}

/// Largest `|f^l y − f^l x| e^{−(a+4ε)l} / |y − x|` for `l ≤ horizon`.
pub fn contraction_constant<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    reference: &[Vector],
    y: &Vector,
    rate: f64,
    horizon: usize,
) -> Result<f64> {
    let traj = compose(family, omega, y, horizon)?;
    let d0 = (y - &reference[0]).norm();
    if d0 == 0.0 {
        return Ok(0.0);
    }
    Ok((0..=horizon)
        .map(|l| (&traj[l] - &reference[l]).norm() * (-rate * l as f64).exp() / d0)
        .fold(0.0, f64::max))
}

/// Chart of the local stable manifold at `x` (level 0).
pub fn fit_local_chart<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    p: &PesinParams,
    opts: &ChartOptions,
) -> Result<ManifoldChart> {
    fit_local_chart_at(family, omega, x, 0, p, opts)
}

/// Chart at `f^n_ω x`, with `α_n, β_n` from the level recursion.
pub fn fit_local_chart_at<F: DiffeoFamily + ?Sized>(
    family: &F,
    omega: &OmegaPrefix,
    x: &Vector,
    level: usize,
    p: &PesinParams,
    opts: &ChartOptions,
) -> Result<ManifoldChart> {
    let horizon = opts.l_test.max(opts.shoot_horizon);
    if omega.len() < level + horizon + 1 {
        return Err(PesinError::InvalidInput(format!(
            "chart at level {level} needs {} noise records",
            level + horizon + 1
        )));
    }
    if opts.degree == 0 || opts.samples == 0 {
        return Err(PesinError::InvalidInput("degree and samples must be positive".into()));
    }
    let base = compose(family, omega, x, level)?.pop().expect("orbit point");
    let omega = omega.shift(level).materialize(family);
    let key = StreamKey::new(opts.seed, level as u64);

    let frames = OrbitFrames::along_orbit(family, &omega, &base, horizon, p.a)?;
    let d = frames.dim();
    let k = frames.stable_dim();
    if k != p.k {
        return Err(PesinError::Certification(format!(
            "stable dimension {k} at the base point, parameters expect {}",
            p.k
        )));
    }
    if opts.check_membership {
        let l = l_from_frames(&frames, p);
        if l.l > p.l_cap {
            return Err(PesinError::Certification(format!("l = {} exceeds l′ = {}", l.l, p.l_cap)));
        }
        if family.has_hessian() {
            let r = estimate_r(family, &omega, &base, p.eps, horizon, key)?;
            if r.r > p.r_cap {
                return Err(PesinError::Certification(format!("r = {} exceeds r′ = {}", r.r, p.r_cap)));
            }
        }
    }

    let constants = chart_constants(p);
    let root = ChartScales {
        alpha: opts.sample_radius.unwrap_or(constants.r0),
        beta: opts.beta0,
        gamma: opts.gamma_cap,
    };
    let level_scales = root.at_level(p.eps, level);
    let radius = level_scales.alpha;
    let e = frames.e[0].clone();
    let h = complement(&e, d);
    let rate = p.a + 4.0 * p.eps;
    let reference = frames.points.clone();
    let shooter = Shooter::new(family, &omega, &frames, opts.shoot_horizon);

    let targets = ball_sample(k, radius, opts.samples, key, 0);
    let results: Vec<Option<(Vector, Vector, f64)>> = crate::parallel::map_indexed(targets.len(), |i| {
        let c = &targets[i];
        let param = |s: &Vector| -> Result<(Vector, Matrix)> {
            Ok((&base + &e * c + &h * s, h.clone()))
        };
        let shot = shooter.solve(param, &reference, Vector::zeros(d - k)).ok()?;
        let y = &base + &e * c + &h * &shot.s;
        let gamma = contraction_constant(family, &omega, &reference, &y, rate, opts.l_test).ok()?;
        (gamma <= level_scales.gamma).then_some((c.clone(), shot.s, gamma))
    });
    let accepted: Vec<(Vector, Vector, f64)> = results.into_iter().flatten().collect();
    if accepted.len() < opts.min_accepted.max(1) {
        return Err(PesinError::SparseAcceptance {
            accepted: accepted.len(),
            required: opts.min_accepted.max(1),
        });
    }

    // regression in scaled coordinates u = c / radius
    let monos = monomials(k, opts.degree);
    let nm = monos.len();
    let design = Matrix::from_fn(accepted.len(), nm, |i, m| monomial(&(&accepted[i].0 / radius), &monos[m]));
    let rhs = Matrix::from_fn(accepted.len(), d - k, |i, j| accepted[i].1[j]);
    let coef_u = lstsq(&design, &rhs)?;
    let fit_rms = if d > k {
        ((&design * &coef_u - &rhs).norm_squared() / (accepted.len() * (d - k)) as f64).sqrt()
    } else {
        0.0
    };
    let coeffs = Matrix::from_fn(d - k, nm, |j, m| {
        let deg: u32 = monos[m].iter().sum();
        coef_u[(m, j)] / radius.powi(deg as i32)
    });
    let gamma = accepted.iter().map(|a| a.2).fold(0.0, f64::max);

    let mut chart = ManifoldChart {
        level,
        center: base.clone(),
        e,
        h,
        monomials: monos,
        coeffs,
        scales: ChartScales {
            alpha: radius,
            beta: level_scales.beta,
            gamma,
        },
        constants,
        lip_h: 0.0,
        lip_dh: 0.0,
        tangency: 0.0,
        residual: 0.0,
        fit_rms,
        accepted: accepted.len(),
        candidates: targets.len(),
        contraction: gamma,
        l_test: opts.l_test,
        points: Vec::new(),
    };
    chart.points = accepted.iter().map(|(c, s, _)| &base + &chart.e * c + &chart.h * s).collect();

    // Lipschitz certificates on a grid of the chart domain
    let grid = ball_sample(k, radius, 65, key, 1);
    for c in &grid {
        chart.lip_h = chart.lip_h.max(op_norm(&chart.derivative(c)));
        chart.lip_dh = chart.lip_dh.max(chart.second_derivative_norm(c));
    }
    chart.tangency = op_norm(&chart.derivative(&Vector::zeros(k)));
    for c in ball_sample(k, radius, 9, key, 2) {
        let w = chart.eval(&c);
        let param = |s: &Vector| -> Result<(Vector, Matrix)> {
            Ok((&base + &chart.e * &c + &chart.h * s, chart.h.clone()))
        };
        let dist = match shooter.solve(param, &reference, w.clone()) {
            Ok(shot) => (&shot.s - &w).norm() + shot.error,
            Err(_) => f64::INFINITY,
        };
        chart.residual = chart.residual.max(dist);
    }
    if chart.lip_h.max(chart.lip_dh) > chart.scales.beta {
        return Err(PesinError::Certification(format!(
            "Lip(h) = {:.4}, Lip(Dh) = {:.4} exceed β = {:.4}",
            chart.lip_h, chart.lip_dh, chart.scales.beta
        )));
    }
    Ok(chart)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushForwardReport {
    /// Largest distance of `f(point of chart n)` from the graph of chart `n+1`.
    pub max_graph_distance: f64,
    /// Fraction of pushed points whose E-coordinate lies within `α_{n+1}`.
    pub inside_fraction: f64,
    pub points: usize,
}

/// Pushes grid points of `chart` one step and measures them against `next`.
pub fn push_forward_check<F: DiffeoFamily + ?Sized>(
    family: &F,
    theta: &[f64],
    chart: &ManifoldChart,
    next: &ManifoldChart,
    points: usize,
) -> Result<PushForwardReport> {
    let k = chart.stable_dim();
    let grid = ball_sample(k, chart.scales.alpha, points, StreamKey::new(0, 0), 3);
    let mut worst: f64 = 0.0;
    let mut inside = 0;
    for c in &grid {
        let y = family.apply(theta, &chart.point(c))?;
        let (c1, w1) = next.coords(&y);
        worst = worst.max((&w1 - next.eval(&c1)).norm());
        if c1.norm() <= next.scales.alpha {
            inside += 1;
        }
    }
    Ok(PushForwardReport {
        max_graph_distance: worst,
        inside_fraction: inside as f64 / grid.len() as f64,
        points: grid.len(),
    })
}
