//! Set-prediction scoring: bipartite matching between object classes and
//! detector queries, and the keypoint loss of the matched pairs.

use serde::{Deserialize, Serialize};

use crate::camera::Keypoints2;
use crate::detector::{Permutation, ProbabilityMatrix};
use crate::scene::{ClassLabels, CLASS_COUNT, NO_OBJECT};

/// Floor applied to probabilities before taking logarithms.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Ground-truth presence labels and keypoints for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub c_g: ClassLabels,
    /// Keypoints of present classes; `None` where `c_g` is zero.
    pub keypoints: [Option<Keypoints2>; CLASS_COUNT],
}

/// `sigma[i]` is the query matched to class `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub sigma: Permutation,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the L1 keypoint term.
    pub gamma: f64,
    /// Weight on the log-likelihood of absent classes.
    pub no_object_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 10.0,
            no_object_weight: 1.0,
        }
    }
}

/// `Σᵢ −c_g[i] · probs[σ(i)][i]`.
pub fn matching_cost(sigma: &Permutation, probs: &ProbabilityMatrix, c_g: &ClassLabels) -> f64 {
    (0..CLASS_COUNT)
        .map(|i| -f64::from(u8::from(c_g[i])) * probs[sigma[i]][i])
        .sum()
}

/// Minimum-cost perfect matching on a square matrix, `O(n³)` shortest
/// augmenting paths with vertex potentials. Returns the column of each row.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return vec![];
    }
    // 1-based arrays with a virtual row/column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        row_of[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = row_of[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[r0 - 1][col - 1] - u[r0] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[row_of[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if row_of[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            row_of[col0] = row_of[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=n {
        assignment[row_of[col] - 1] = col - 1;
    }
    assignment
}

fn assignment_cost(cost: &[Vec<f64>], a: &[usize]) -> f64 {
    a.iter().enumerate().map(|(r, &c)| cost[r][c]).sum()
}

/// Optimal matching of classes to queries. Among optimal matchings the
/// lexicographically smallest `σ` is returned.
pub fn hungarian_match(probs: &ProbabilityMatrix, c_g: &ClassLabels) -> MatchResult {
    // rows: classes, columns: queries
    let cost: Vec<Vec<f64>> = (0..CLASS_COUNT)
        .map(|i| {
            (0..CLASS_COUNT)
                .map(|q| -f64::from(u8::from(c_g[i])) * probs[q][i])
                .collect()
        })
        .collect();
    let optimum = assignment_cost(&cost, &solve_assignment(&cost));
    let tol = 1e-12 * (1.0 + optimum.abs());

    // Fix σ(0), σ(1), … to the smallest query that still admits an optimal
    // completion.
    let mut sigma = [usize::MAX; CLASS_COUNT];
    let mut used = [false; CLASS_COUNT];
    let mut prefix = 0.0;
    for row in 0..CLASS_COUNT {
        for q in 0..CLASS_COUNT {
            if used[q] {
                continue;
            }
            let rows: Vec<usize> = ((row + 1)..CLASS_COUNT).collect();
            let cols: Vec<usize> = (0..CLASS_COUNT).filter(|&c| !used[c] && c != q).collect();
            let sub: Vec<Vec<f64>> = rows
                .iter()
                .map(|&r| cols.iter().map(|&c| cost[r][c]).collect())
                .collect();
            let rest = assignment_cost(&sub, &solve_assignment(&sub));
            if prefix + cost[row][q] + rest <= optimum + tol {
                sigma[row] = q;
                used[q] = true;
                prefix += cost[row][q];
                break;
            }
        }
        debug_assert!(sigma[row] != usize::MAX);
    }
    MatchResult {
        sigma,
        cost: matching_cost(&sigma, probs, c_g),
    }
}

/// Class of query `σ(i)` that the loss rewards: `i` for present classes,
/// the no-object class otherwise.
fn target(i: usize, c_g: &ClassLabels) -> usize {
    if c_g[i] {
        i
    } else {
        NO_OBJECT
    }
}

/// Negative log-likelihood of the matched classes plus `γ`-weighted L1
/// keypoint error of present classes (plain sum over all 64 coordinates).
pub fn keypoint_loss(
    m: &MatchResult,
    probs: &ProbabilityMatrix,
    pred: &[Keypoints2; CLASS_COUNT],
    gt: &GroundTruthFrame,
    cfg: &LossConfig,
) -> f64 {
    (0..CLASS_COUNT)
        .map(|i| {
            let q = m.sigma[i];
            let p = probs[q][target(i, &gt.c_g)].max(PROBABILITY_FLOOR);
            let weight = if gt.c_g[i] { 1.0 } else { cfg.no_object_weight };
            let nll = -weight * p.ln();
            let l1 = match (&gt.keypoints[i], gt.c_g[i]) {
                (Some(k), true) => k
                    .iter()
                    .zip(&pred[q])
                    .map(|(a, b)| (a.x - b.x).abs() + (a.y - b.y).abs())
                    .sum::<f64>(),
                _ => 0.0,
            };
            nll + cfg.gamma * l1
        })
        .sum()
}
