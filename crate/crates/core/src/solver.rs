//! Second-order graph alignment (quadratic assignment) solvers.
//!
//! The objective for a matching `sigma` is
//! `sum_i A^v[i, sigma(i)] + sum_{i,k} A^e[i, sigma(i), k, sigma(k)]`,
//! minimized over all bijections. [`solve_exact`] enumerates permutations up to
//! [`EXACT_LIMIT`] nodes; [`solve_heuristic`] seeds a 2-swap local search with
//! linear-assignment starts and seeded random restarts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ndarray::Array2;

use crate::assignment::linear_assignment;
use crate::error::{Error, Result};
use crate::graph::AffinityPair;

/// Largest instance size accepted by [`solve_exact`] (9! = 362,880 permutations).
pub const EXACT_LIMIT: usize = 9;

/// A one-to-one matching stored as a permutation: `sigma[i] = j` means
/// `V[i, j] = 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Matching(Vec<usize>);

impl Matching {
    pub fn new(sigma: Vec<usize>) -> Result<Self> {
        let n = sigma.len();
        let mut seen = vec![false; n];
        for &j in &sigma {
            if j >= n || std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidMatching(format!("{sigma:?} is not a permutation of 0..{n}")));
            }
        }
        Ok(Self(sigma))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sigma(&self) -> &[usize] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (i, &j) in self.0.iter().enumerate() {
            inv[j] = i;
        }
        Self(inv)
    }

    /// `(other ∘ self)(i) = other[self[i]]`.
    pub fn then(&self, other: &Matching) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::shape(format!("cannot compose matchings of size {} and {}", self.len(), other.len())));
        }
        Ok(Self(self.0.iter().map(|&j| other.0[j]).collect()))
    }

    /// Binary indicator matrix `V`.
    pub fn to_matrix(&self) -> Array2<f64> {
        let n = self.len();
        let mut v = Array2::zeros((n, n));
        for (i, &j) in self.0.iter().enumerate() {
            v[[i, j]] = 1.0;
        }
        v
    }
}

impl TryFrom<Vec<usize>> for Matching {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Matching> for Vec<usize> {
    fn from(m: Matching) -> Self {
        m.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Heuristic,
}

/// Result of one alignment solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub n: usize,
    pub sigma: Matching,
    pub objective: f64,
    pub method: Method,
    /// Permutations evaluated (exact) or accepted swaps (heuristic).
    pub iterations: usize,
}

impl SolveReport {
    pub fn matching(&self) -> &Matching {
        &self.sigma
    }
}

/// Settings for [`solve_heuristic`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    /// Random starting permutations tried in addition to the two
    /// linear-assignment starts.
    pub restarts: usize,
    /// Local search stops after `max_swaps_per_node * n` accepted swaps.
    pub max_swaps_per_node: usize,
    pub seed: u64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self { restarts: 8, max_swaps_per_node: 50, seed: 0 }
    }
}

/// Which solver to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Exact,
    Heuristic(HeuristicConfig),
}

impl Default for Solver {
    fn default() -> Self {
        Solver::Heuristic(HeuristicConfig::default())
    }
}

impl Solver {
    pub fn solve(&self, aff: &AffinityPair) -> Result<SolveReport> {
        match self {
            Solver::Exact => solve_exact(aff),
            Solver::Heuristic(cfg) => solve_heuristic(aff, cfg),
        }
    }

    pub fn method(&self) -> Method {
        match self {
            Solver::Exact => Method::Exact,
            Solver::Heuristic(_) => Method::Heuristic,
        }
    }
}

/// Objective without shape checks. Vertex and edge sums are accumulated
/// separately in row order, then added.
pub(crate) fn objective_unchecked(aff: &AffinityPair, sigma: &[usize]) -> f64 {
    let mut vertex = 0.0;
    for (i, &j) in sigma.iter().enumerate() {
        vertex += aff.vertex[[i, j]];
    }
    let mut edge = 0.0;
    for (i, &j) in sigma.iter().enumerate() {
        for (k, &l) in sigma.iter().enumerate() {
            edge += aff.edge[[i, j, k, l]];
        }
    }
    vertex + edge
}

/// Alignment cost of `v` under `aff`.
pub fn objective_value(aff: &AffinityPair, v: &Matching) -> Result<f64> {
    let n = aff.square_size()?;
    if v.len() != n {
        return Err(Error::shape(format!("matching of size {} for a {n}x{n} instance", v.len())));
    }
    Ok(objective_unchecked(aff, v.sigma()))
}

/// In-place lexicographic successor; false when `p` is the last permutation.
fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Global minimizer by enumerating all permutations in lexicographic order.
/// The first permutation attaining the minimum is kept.
pub fn solve_exact(aff: &AffinityPair) -> Result<SolveReport> {
    let n = aff.square_size()?;
    if n > EXACT_LIMIT {
        return Err(Error::TooLarge { n, max: EXACT_LIMIT });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_obj = objective_unchecked(aff, &perm);
    let mut count = 1;
    while next_permutation(&mut perm) {
        count += 1;
        let obj = objective_unchecked(aff, &perm);
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&perm);
        }
    }
    Ok(SolveReport { n, sigma: Matching(best), objective: best_obj, method: Method::Exact, iterations: count })
}

/// Change in objective from swapping the targets of rows `i` and `k`.
fn swap_delta(aff: &AffinityPair, sigma: &[usize], i: usize, k: usize) -> f64 {
    let (si, sk) = (sigma[i], sigma[k]);
    let v = &aff.vertex;
    let e = &aff.edge;
    let mut delta = v[[i, sk]] + v[[k, si]] - v[[i, si]] - v[[k, sk]];
    // Terms with exactly one endpoint in {i, k}.
    for (m, &sm) in sigma.iter().enumerate() {
        if m == i || m == k {
            continue;
        }
        delta += e[[i, sk, m, sm]] + e[[m, sm, i, sk]] + e[[k, si, m, sm]] + e[[m, sm, k, si]]
            - e[[i, si, m, sm]]
            - e[[m, sm, i, si]]
            - e[[k, sk, m, sm]]
            - e[[m, sm, k, sk]];
    }
    // Terms with both endpoints in {i, k}.
    delta += e[[i, sk, i, sk]] + e[[k, si, k, si]] + e[[i, sk, k, si]] + e[[k, si, i, sk]]
        - e[[i, si, i, si]]
        - e[[k, sk, k, sk]]
        - e[[i, si, k, sk]]
        - e[[k, sk, i, si]];
    delta
}

/// Best-improvement 2-swap descent from `start`. Returns the final matching
/// and the objective after every accepted swap (first entry is the start).
pub fn local_search(aff: &AffinityPair, start: &Matching, max_swaps: usize) -> Result<(Matching, Vec<f64>)> {
    let n = aff.square_size()?;
    if start.len() != n {
        return Err(Error::shape(format!("start matching of size {} for size-{n} instance", start.len())));
    }
    let mut sigma = start.0.clone();
    let mut trace = vec![objective_unchecked(aff, &sigma)];
    // Improvements smaller than this are treated as ties so rounding noise
    // cannot cause cycling.
    let eps = 1e-12 * (1.0 + trace[0].abs());
    while trace.len() <= max_swaps {
        let mut best = (-eps, None);
        for i in 0..n {
            for k in (i + 1)..n {
                let d = swap_delta(aff, &sigma, i, k);
                if d < best.0 {
                    best = (d, Some((i, k)));
                }
            }
        }
        let Some((i, k)) = best.1 else { break };
        let before = *trace.last().unwrap();
        sigma.swap(i, k);
        let after = objective_unchecked(aff, &sigma);
        if after >= before {
            // Predicted gain lost to rounding; undo and stop.
            sigma.swap(i, k);
            break;
        }
        trace.push(after);
    }
    Ok((Matching(sigma), trace))
}

/// Linear-assignment cost with an aggregated pairwise potential:
/// `A^v[i, j] + A^e[i, j, i, j] + sum_{k != i} min_{l != j} A^e[i, j, k, l]`.
fn potential_cost(aff: &AffinityPair) -> Array2<f64> {
    let n = aff.vertex.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let mut c = aff.vertex[[i, j]] + aff.edge[[i, j, i, j]];
        for k in (0..n).filter(|&k| k != i) {
            c += (0..n).filter(|&l| l != j).map(|l| aff.edge[[i, j, k, l]]).fold(f64::INFINITY, f64::min);
        }
        c
    })
}

/// Two-phase heuristic: linear assignment starts (vertex-only and with an
/// aggregated edge potential) plus `restarts` seeded random starts, each
/// improved by [`local_search`]. The cheapest result wins; ties go to the
/// lexicographically smaller permutation.
pub fn solve_heuristic(aff: &AffinityPair, cfg: &HeuristicConfig) -> Result<SolveReport> {
    let n = aff.square_size()?;
    if n == 0 {
        return Ok(SolveReport {
            n,
            sigma: Matching(vec![]),
            objective: 0.0,
            method: Method::Heuristic,
            iterations: 0,
        });
    }
    let mut starts =
        vec![Matching(linear_assignment(aff.vertex.view())), Matching(linear_assignment(potential_cost(aff).view()))];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.restarts {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut rng);
        starts.push(Matching(p));
    }
    let max_swaps = cfg.max_swaps_per_node.saturating_mul(n);
    let mut best: Option<(f64, Matching)> = None;
    let mut swaps = 0;
    for start in &starts {
        let (m, trace) = local_search(aff, start, max_swaps)?;
        swaps += trace.len() - 1;
        let obj = *trace.last().unwrap();
        let better = match &best {
            None => true,
            Some((b, bm)) => obj < *b || (obj == *b && m < *bm),
        };
        if better {
            best = Some((obj, m));
        }
    }
    let (objective, sigma) = best.expect("at least one start");
    Ok(SolveReport { n, sigma, objective, method: Method::Heuristic, iterations: swaps })
}
