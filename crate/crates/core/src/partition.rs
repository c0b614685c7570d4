//! Exact entropy calculus on finite measure spaces.
//!
//! These routines are the ground truth used to check the Monte Carlo entropy
//! estimator. A ground set is `0..n`; a partition is stored as one cell id per
//! point, which makes joins a single pass with pair hashing.

use std::collections::HashMap;

use crate::error::{PesinError, Result};

/// Default bound on the number of noise words enumerated by the exact oracles.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// Partition of a finite ground set into nonempty disjoint cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinitePartition {
    labels: Vec<u32>,
    cells: usize,
}

impl FinitePartition {
    /// Builds a partition from explicit cells, checking disjointness and cover.
    pub fn from_cells(cells: &[Vec<usize>], ground: usize) -> Result<Self> {
        let mut labels = vec![u32::MAX; ground];
        for (c, cell) in cells.iter().enumerate() {
            if cell.is_empty() {
                return Err(PesinError::InvalidInput(format!("cell {c} is empty")));
            }
            for &x in cell {
                if x >= ground {
                    return Err(PesinError::Dimension(format!(
                        "point {x} outside ground set of size {ground}"
                    )));
                }
                if labels[x] != u32::MAX {
                    return Err(PesinError::InvalidInput(format!(
                        "point {x} lies in two cells"
                    )));
                }
                labels[x] = c as u32;
            }
        }
        if let Some(x) = labels.iter().position(|&l| l == u32::MAX) {
            return Err(PesinError::InvalidInput(format!(
                "point {x} is not covered by any cell"
            )));
        }
        Ok(Self::from_labels(&labels))
    }

    /// Builds a partition from arbitrary per-point labels. Cell ids are
    /// renumbered by first appearance.
    pub fn from_labels<L: Copy + Eq + std::hash::Hash>(labels: &[L]) -> Self {
        let mut map: HashMap<L, u32> = HashMap::new();
        let mut out = Vec::with_capacity(labels.len());
        for &l in labels {
            let next = map.len() as u32;
            out.push(*map.entry(l).or_insert(next));
        }
        Self {
            cells: map.len(),
            labels: out,
        }
    }

    pub fn trivial(ground: usize) -> Self {
        Self {
            labels: vec![0; ground],
            cells: usize::from(ground > 0),
        }
    }

    /// The partition into points.
    pub fn discrete(ground: usize) -> Self {
        Self {
            labels: (0..ground as u32).collect(),
            cells: ground,
        }
    }

    pub fn ground_size(&self) -> usize {
        self.labels.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    pub fn label(&self, x: usize) -> u32 {
        self.labels[x]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn cells(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cells];
        for (x, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(x);
        }
        out
    }

    /// True if every cell of `self` lies inside a single cell of `coarser`.
    pub fn refines(&self, coarser: &FinitePartition) -> bool {
        if self.ground_size() != coarser.ground_size() {
            return false;
        }
        let mut owner = vec![u32::MAX; self.cells];
        for (x, &l) in self.labels.iter().enumerate() {
            let o = &mut owner[l as usize];
            if *o == u32::MAX {
                *o = coarser.labels[x];
            } else if *o != coarser.labels[x] {
                return false;
            }
        }
        true
    }
}

/// Probability weights on a finite ground set.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMeasure {
    weights: Vec<f64>,
}

impl FiniteMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(PesinError::InvalidInput(
                "measure weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(PesinError::InvalidInput(format!(
                "measure weights sum to {total}, not 1"
            )));
        }
        Ok(Self { weights })
    }

    pub fn uniform(ground: usize) -> Self {
        Self {
            weights: vec![1.0 / ground as f64; ground],
        }
    }

    pub fn ground_size(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, x: usize) -> f64 {
        self.weights[x]
    }

    /// Image measure under a map `0..n -> 0..target`.
    pub fn pushforward(&self, table: &[usize], target: usize) -> Result<FiniteMeasure> {
        if table.len() != self.weights.len() {
            return Err(PesinError::Dimension("map table length".into()));
        }
        let mut w = vec![0.0; target];
        for (x, &y) in table.iter().enumerate() {
            if y >= target {
                return Err(PesinError::Dimension(format!("image {y} out of range")));
            }
            w[y] += self.weights[x];
        }
        Ok(FiniteMeasure { weights: w })
    }
}

fn check_ground(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(PesinError::Dimension(format!(
            "ground sets differ: {a} vs {b} points"
        )));
    }
    Ok(())
}

fn plogp_sum(masses: impl Iterator<Item = f64>) -> f64 {
    -masses
        .filter(|&m| m > 0.0)
        .map(|m| m * m.ln())
        .sum::<f64>()
}

/// Shannon entropy (nats) of `p` under `mu`.
pub fn entropy(p: &FinitePartition, mu: &FiniteMeasure) -> Result<f64> {
    check_ground(p.ground_size(), mu.ground_size())?;
    let mut mass = vec![0.0; p.cell_count()];
    for (x, &l) in p.labels.iter().enumerate() {
        mass[l as usize] += mu.weights[x];
    }
    Ok(plogp_sum(mass.into_iter()))
}

/// Mean conditional entropy `H(xi | eta)`.
pub fn conditional_entropy(
    xi: &FinitePartition,
    eta: &FinitePartition,
    mu: &FiniteMeasure,
) -> Result<f64> {
    check_ground(xi.ground_size(), eta.ground_size())?;
    check_ground(xi.ground_size(), mu.ground_size())?;
    let mut joint: HashMap<(u32, u32), f64> = HashMap::new();
    let mut cond = vec![0.0; eta.cell_count()];
    for x in 0..xi.ground_size() {
        let w = mu.weights[x];
        *joint.entry((xi.labels[x], eta.labels[x])).or_insert(0.0) += w;
        cond[eta.labels[x] as usize] += w;
    }
    // Sort keys so the floating point sum has a fixed order.
    let mut keys: Vec<_> = joint.into_iter().collect();
    keys.sort_by_key(|(k, _)| *k);
    let mut h = 0.0;
    for ((_, b), m) in keys {
        let mb = cond[b as usize];
        if m > 0.0 && mb > 0.0 {
            h -= m * (m / mb).ln();
        }
    }
    Ok(h)
}

/// Coarsest common refinement.
pub fn join(xi: &FinitePartition, eta: &FinitePartition) -> Result<FinitePartition> {
    check_ground(xi.ground_size(), eta.ground_size())?;
    let pairs: Vec<(u32, u32)> = xi.labels.iter().copied().zip(eta.labels.iter().copied()).collect();
    Ok(FinitePartition::from_labels(&pairs))
}

/// Preimage partition `T^{-1} xi` of a map given as a table `x -> T(x)`.
pub fn pullback(xi: &FinitePartition, map_row: &[usize]) -> Result<FinitePartition> {
    let mut labels = Vec::with_capacity(map_row.len());
    for &y in map_row {
        if y >= xi.ground_size() {
            return Err(PesinError::Dimension(format!(
                "map image {y} outside ground set of size {}",
                xi.ground_size()
            )));
        }
        labels.push(xi.labels[y]);
    }
    Ok(FinitePartition::from_labels(&labels))
}

/// Finite-state random dynamical system: i.i.d. choice among map tables.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteRds {
    states: usize,
    maps: Vec<Vec<usize>>,
    probs: Vec<f64>,
}

impl FiniteRds {
    pub fn new(states: usize, maps: Vec<Vec<usize>>, probs: Vec<f64>) -> Result<Self> {
        if maps.is_empty() || maps.len() != probs.len() {
            return Err(PesinError::InvalidInput(
                "need one probability per map table".into(),
            ));
        }
        for (i, m) in maps.iter().enumerate() {
            if m.len() != states || m.iter().any(|&y| y >= states) {
                return Err(PesinError::InvalidInput(format!(
                    "map table {i} is not a total function on {states} states"
                )));
            }
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(PesinError::InvalidInput(
                "map distribution must be a probability vector".into(),
            ));
        }
        Ok(Self {
            states,
            maps,
            probs,
        })
    }

    /// One map applied with probability one.
    pub fn deterministic(table: Vec<usize>) -> Result<Self> {
        let n = table.len();
        Self::new(n, vec![table], vec![1.0])
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn map_count(&self) -> usize {
        self.maps.len()
    }

    pub fn map(&self, i: usize) -> &[usize] {
        &self.maps[i]
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// The system whose single step is `t` consecutive steps of `self`.
    pub fn power(&self, t: usize, cap: u64) -> Result<FiniteRds> {
        if t == 0 {
            return Err(PesinError::InvalidInput("power t must be >= 1".into()));
        }
        let words = word_count(self.maps.len(), t);
        if words > cap as u128 {
            return Err(PesinError::EnumerationCap { words, cap });
        }
        let mut maps = vec![(0..self.states).collect::<Vec<_>>()];
        let mut probs = vec![1.0];
        for _ in 0..t {
            let mut next_maps = Vec::with_capacity(maps.len() * self.maps.len());
            let mut next_probs = Vec::with_capacity(maps.len() * self.maps.len());
            for (m, p) in maps.iter().zip(&probs) {
                for (g, q) in self.maps.iter().zip(&self.probs) {
                    next_maps.push(m.iter().map(|&y| g[y]).collect());
                    next_probs.push(p * q);
                }
            }
            maps = next_maps;
            probs = next_probs;
        }
        Ok(FiniteRds {
            states: self.states,
            maps,
            probs,
        })
    }
}

fn word_count(maps: usize, n: usize) -> u128 {
    (maps as u128).saturating_pow(n as u32)
}

fn check_cap(rds: &FiniteRds, n: usize, cap: u64) -> Result<()> {
    let words = word_count(rds.map_count(), n);
    if words > cap as u128 {
        return Err(PesinError::EnumerationCap { words, cap });
    }
    Ok(())
}

/// `(1/n) E_ω H_μ(⋁_{k<n} (f^k_ω)^{-1} ξ)` by exact enumeration of noise words.
pub fn kifer_n_step(
    rds: &FiniteRds,
    xi: &FinitePartition,
    mu: &FiniteMeasure,
    n: usize,
) -> Result<f64> {
    kifer_n_step_capped(rds, xi, mu, n, DEFAULT_ENUMERATION_CAP)
}

pub fn kifer_n_step_capped(
    rds: &FiniteRds,
    xi: &FinitePartition,
    mu: &FiniteMeasure,
    n: usize,
    cap: u64,
) -> Result<f64> {
    if n == 0 {
        return Err(PesinError::InvalidInput("n must be >= 1".into()));
    }
    check_ground(xi.ground_size(), rds.states)?;
    check_ground(mu.ground_size(), rds.states)?;
    check_cap(rds, n, cap)?;
    let positions: Vec<usize> = (0..rds.states).collect();
    let total = kifer_dfs(rds, xi, mu, &positions, xi.clone(), 1, n)?;
    Ok(total / n as f64)
}

// The join after k maps only depends on f_0..f_{k-1}; the last map of an
// n-word never enters, so the recursion stops one level early.
fn kifer_dfs(
    rds: &FiniteRds,
    xi: &FinitePartition,
    mu: &FiniteMeasure,
    positions: &[usize],
    joined: FinitePartition,
    depth: usize,
    n: usize,
) -> Result<f64> {
    if depth == n {
        return entropy(&joined, mu);
    }
    let mut acc = 0.0;
    for m in 0..rds.map_count() {
        let p = rds.probs[m];
        if p == 0.0 {
            continue;
        }
        let table = &rds.maps[m];
        let next: Vec<usize> = positions.iter().map(|&y| table[y]).collect();
        let step = pullback(xi, &next)?;
        let j = join(&joined, &step)?;
        acc += p * kifer_dfs(rds, xi, mu, &next, j, depth + 1, n)?;
    }
    Ok(acc)
}

/// `(1/n) H_μ(⋁_{i<n} T^{-i} ξ | ζ0)` for a self-map table `T`.
pub fn transformation_conditional_n_step(
    table: &[usize],
    xi: &FinitePartition,
    zeta0: &FinitePartition,
    mu: &FiniteMeasure,
    n: usize,
) -> Result<f64> {
    if n == 0 {
        return Err(PesinError::InvalidInput("n must be >= 1".into()));
    }
    let g = table.len();
    check_ground(xi.ground_size(), g)?;
    check_ground(zeta0.ground_size(), g)?;
    check_ground(mu.ground_size(), g)?;
    let mut joined = xi.clone();
    let mut iterate: Vec<usize> = (0..g).collect();
    for _ in 1..n {
        for y in iterate.iter_mut() {
            *y = table[*y];
        }
        joined = join(&joined, &pullback(xi, &iterate)?)?;
    }
    Ok(conditional_entropy(&joined, zeta0, mu)? / n as f64)
}

/// Skew-product form of the n-step entropy.
///
/// Works on the product of the length-`n` word space (measure `ν^n`) with the
/// state space. The skew map acts as `(w, x) -> (rot(w), f_{w_0} x)`, where the
/// cyclic rotation stands in for the shift on finite words; for `k < n` its
/// iterates agree with `(τ^k w, f^k_w x)`. Returns
/// `(1/n) H(⋁_{k<n} F^{-k}(ξ × η) | ζ_0)` with `ζ_0` the partition into fibres
/// `{w} × X`. `eta_omega` partitions word indices, where word `w` has letter
/// `k` equal to `(w / M^k) mod M`.
pub fn skew_conditional_n_step(
    rds: &FiniteRds,
    xi: &FinitePartition,
    eta_omega: &FinitePartition,
    mu: &FiniteMeasure,
    n: usize,
) -> Result<f64> {
    skew_conditional_n_step_capped(rds, xi, eta_omega, mu, n, DEFAULT_ENUMERATION_CAP)
}

pub fn skew_conditional_n_step_capped(
    rds: &FiniteRds,
    xi: &FinitePartition,
    eta_omega: &FinitePartition,
    mu: &FiniteMeasure,
    n: usize,
    cap: u64,
) -> Result<f64> {
    if n == 0 {
        return Err(PesinError::InvalidInput("n must be >= 1".into()));
    }
    check_ground(xi.ground_size(), rds.states)?;
    check_ground(mu.ground_size(), rds.states)?;
    check_cap(rds, n, cap)?;
    let m = rds.map_count();
    let words = m.pow(n as u32);
    check_ground(eta_omega.ground_size(), words)?;
    let s = rds.states;

    let letter = |w: usize, k: usize| (w / m.pow(k as u32)) % m;
    let rotate = |w: usize| {
        let first = w % m;
        w / m + first * m.pow(n as u32 - 1)
    };
    let word_prob: Vec<f64> = (0..words)
        .map(|w| (0..n).map(|k| rds.probs[letter(w, k)]).product())
        .collect();

    let ground = words * s;
    let mut weights = Vec::with_capacity(ground);
    let mut table = Vec::with_capacity(ground);
    let mut product_labels = Vec::with_capacity(ground);
    let mut fibres = Vec::with_capacity(ground);
    for w in 0..words {
        let f = &rds.maps[letter(w, 0)];
        let rw = rotate(w);
        for x in 0..s {
            weights.push(word_prob[w] * mu.weights[x]);
            table.push(rw * s + f[x]);
            product_labels.push((xi.labels[x], eta_omega.labels[w]));
            fibres.push(w);
        }
    }
    let measure = FiniteMeasure { weights };
    let product = FinitePartition::from_labels(&product_labels);
    let zeta0 = FinitePartition::from_labels(&fibres);
    transformation_conditional_n_step(&table, &product, &zeta0, &measure, n)
}
