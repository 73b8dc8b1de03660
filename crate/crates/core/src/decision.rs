//! Multi-criteria decision mathematics.
//!
//! A [`DecisionMatrix`] holds one row per alternative (a worker) and one
//! column per criterion. [`entropy_weights`] derives objective criterion
//! weights from the spread of each column, and the three scorers
//! ([`edas_scores`], [`aras_scores`], [`mabac_scores`]) turn a matrix plus
//! weights into a [`Ranking`].
//!
//! Everything here is a pure function over immutable inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for the weight-vector sum invariant.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Relative gap below which two scores are treated as tied.
const TIE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecisionError {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("degenerate matrix: entropy weighting needs at least two alternatives, got {0}")]
    DegenerateMatrix(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Whether larger or smaller values of a criterion are preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionDirection {
    Benefit,
    Cost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub direction: CriterionDirection,
}

impl Criterion {
    pub fn benefit(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            direction: CriterionDirection::Benefit,
        }
    }

    pub fn cost(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            direction: CriterionDirection::Cost,
        }
    }
}

/// Alternatives x criteria grid of strictly positive, finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionMatrix {
    alternatives: Vec<String>,
    criteria: Vec<Criterion>,
    // row-major, alternatives.len() * criteria.len()
    values: Vec<f64>,
}

impl DecisionMatrix {
    /// Builds a matrix from rows, validating shape and positivity.
    pub fn new(
        alternatives: Vec<String>,
        criteria: Vec<Criterion>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, DecisionError> {
        if alternatives.is_empty() {
            return Err(DecisionError::InvalidMatrix("no alternatives".into()));
        }
        if criteria.is_empty() {
            return Err(DecisionError::InvalidMatrix("no criteria".into()));
        }
        if rows.len() != alternatives.len() {
            return Err(DecisionError::InvalidMatrix(format!(
                "{} rows for {} alternatives",
                rows.len(),
                alternatives.len()
            )));
        }
        let n = criteria.len();
        let mut values = Vec::with_capacity(rows.len() * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(DecisionError::InvalidMatrix(format!(
                    "row {i} has {} values, expected {n}",
                    row.len()
                )));
            }
            for (j, x) in row.into_iter().enumerate() {
                if !(x.is_finite() && x > 0.0) {
                    return Err(DecisionError::InvalidMatrix(format!(
                        "entry ({i}, {j}) = {x} is not a positive finite value"
                    )));
                }
                values.push(x);
            }
        }
        Ok(Self {
            alternatives,
            criteria,
            values,
        })
    }

    /// Shorthand for tests and examples: ids `a0, a1, ...`, all criteria Benefit.
    pub fn from_benefit_rows(rows: Vec<Vec<f64>>) -> Result<Self, DecisionError> {
        let n = rows.first().map_or(0, Vec::len);
        let ids = (0..rows.len()).map(|i| format!("a{i}")).collect();
        let criteria = (0..n).map(|j| Criterion::benefit(format!("c{j}"))).collect();
        Self::new(ids, criteria, rows)
    }

    pub fn alternatives(&self) -> &[String] {
        &self.alternatives
    }

    pub fn criteria(&self) -> &[Criterion] {
        &self.criteria
    }

    /// Number of alternatives (rows).
    pub fn rows(&self) -> usize {
        self.alternatives.len()
    }

    /// Number of criteria (columns).
    pub fn cols(&self) -> usize {
        self.criteria.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.cols();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows()).map(move |i| self.get(i, j))
    }

    fn direction(&self, j: usize) -> CriterionDirection {
        self.criteria[j].direction
    }
}

/// Criterion weights, non-negative and summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, DecisionError> {
        if weights.is_empty() {
            return Err(DecisionError::InvalidInput("empty weight vector".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DecisionError::InvalidInput(
                "weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(DecisionError::InvalidInput(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Scores per alternative plus the resulting preference order.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// `(alternative id, score)` in matrix row order.
    pub scores: Vec<(String, f64)>,
    /// Alternative ids, best first. Ties go to the smaller id.
    pub order: Vec<String>,
}

impl Ranking {
    fn from_scores(ids: &[String], scores: Vec<f64>) -> Self {
        let mut idx: Vec<usize> = (0..ids.len()).collect();
        idx.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| ids[a].cmp(&ids[b]))
        });
        // Scores that differ only by rounding noise form one tie group,
        // ordered by id. Grouping is anchored at the first member so it
        // never chains across a real gap.
        let mut start = 0;
        while start < idx.len() {
            let anchor = scores[idx[start]];
            let mut end = start + 1;
            while end < idx.len() && nearly_equal(anchor, scores[idx[end]]) {
                end += 1;
            }
            idx[start..end].sort_by(|&a, &b| ids[a].cmp(&ids[b]));
            start = end;
        }
        Ranking {
            scores: ids.iter().cloned().zip(scores).collect(),
            order: idx.into_iter().map(|i| ids[i].clone()).collect(),
        }
    }

    pub fn best(&self) -> &str {
        &self.order[0]
    }

    pub fn score_of(&self, id: &str) -> Option<f64> {
        self.scores.iter().find(|(a, _)| a == id).map(|(_, s)| *s)
    }
}

fn nearly_equal(a: f64, b: f64) -> bool {
    let scale = a.abs().max(b.abs()).max(1.0);
    (a - b).abs() <= TIE_EPSILON * scale
}

/// Shannon-entropy criterion weights.
///
/// With `p_ij = x_ij / sum_i x_ij` and `E_j = -(1/ln m) sum_i p_ij ln p_ij`,
/// the weight is `w_j = (1 - E_j) / sum_k (1 - E_k)`. A constant column has
/// `E_j = 1` and gets no weight; if every column is constant the weights are
/// uniform.
pub fn entropy_weights(matrix: &DecisionMatrix) -> Result<WeightVector, DecisionError> {
    let m = matrix.rows();
    let n = matrix.cols();
    if m < 2 {
        return Err(DecisionError::DegenerateMatrix(m));
    }
    let ln_m = (m as f64).ln();
    let divergence: Vec<f64> = (0..n)
        .map(|j| {
            let total: f64 = matrix.column(j).sum();
            let entropy = -matrix
                .column(j)
                .map(|x| {
                    let p = x / total;
                    p * p.ln()
                })
                .sum::<f64>()
                / ln_m;
            // rounding can push E_j a hair past 1 for constant columns
            (1.0 - entropy).max(0.0)
        })
        .collect();
    let total: f64 = divergence.iter().sum();
    if total <= 0.0 {
        return Ok(WeightVector::uniform(n));
    }
    Ok(WeightVector(divergence.into_iter().map(|d| d / total).collect()))
}

fn check_weights(matrix: &DecisionMatrix, weights: &WeightVector) -> Result<(), DecisionError> {
    if weights.len() != matrix.cols() {
        return Err(DecisionError::InvalidInput(format!(
            "{} weights for {} criteria",
            weights.len(),
            matrix.cols()
        )));
    }
    Ok(())
}

/// EDAS: distance from the average solution.
///
/// Appraisal scores lie in `[0, 1]`.
pub fn edas_scores(
    matrix: &DecisionMatrix,
    weights: &WeightVector,
) -> Result<Ranking, DecisionError> {
    check_weights(matrix, weights)?;
    let (m, n) = (matrix.rows(), matrix.cols());
    let w = weights.as_slice();
    let averages: Vec<f64> = (0..n)
        .map(|j| matrix.column(j).sum::<f64>() / m as f64)
        .collect();

    let mut sp = vec![0.0; m];
    let mut sn = vec![0.0; m];
    for i in 0..m {
        for j in 0..n {
            let x = matrix.get(i, j);
            let av = averages[j];
            let (pda, nda) = match matrix.direction(j) {
                CriterionDirection::Benefit => ((x - av).max(0.0) / av, (av - x).max(0.0) / av),
                CriterionDirection::Cost => ((av - x).max(0.0) / av, (x - av).max(0.0) / av),
            };
            sp[i] += w[j] * pda;
            sn[i] += w[j] * nda;
        }
    }
    let max_sp = sp.iter().copied().fold(0.0, f64::max);
    let max_sn = sn.iter().copied().fold(0.0, f64::max);
    let scores = (0..m)
        .map(|i| {
            let nsp = if max_sp > 0.0 { sp[i] / max_sp } else { 1.0 };
            let nsn = if max_sn > 0.0 {
                1.0 - sn[i] / max_sn
            } else {
                1.0
            };
            (nsp + nsn) / 2.0
        })
        .collect();
    Ok(Ranking::from_scores(matrix.alternatives(), scores))
}

/// ARAS: utility relative to an appended optimal alternative.
///
/// Utility degrees lie in `(0, 1]`; an alternative equal to the optimum
/// scores exactly 1.
pub fn aras_scores(
    matrix: &DecisionMatrix,
    weights: &WeightVector,
) -> Result<Ranking, DecisionError> {
    check_weights(matrix, weights)?;
    let (m, n) = (matrix.rows(), matrix.cols());
    let w = weights.as_slice();

    // Row 0 is the optimal alternative; rows 1..=m are the matrix rows.
    let mut utilities = vec![0.0; m + 1];
    for j in 0..n {
        let optimal = match matrix.direction(j) {
            CriterionDirection::Benefit => matrix.column(j).fold(f64::MIN, f64::max),
            CriterionDirection::Cost => matrix.column(j).fold(f64::MAX, f64::min),
        };
        let transform = |x: f64| match matrix.direction(j) {
            CriterionDirection::Benefit => x,
            CriterionDirection::Cost => 1.0 / x,
        };
        let column: Vec<f64> = std::iter::once(optimal)
            .chain(matrix.column(j))
            .map(transform)
            .collect();
        let total: f64 = column.iter().sum();
        for (u, x) in utilities.iter_mut().zip(&column) {
            *u += w[j] * x / total;
        }
    }
    let s0 = utilities[0];
    let scores = utilities[1..]
        .iter()
        .map(|s| if s0 > 0.0 { s / s0 } else { 1.0 })
        .collect();
    Ok(Ranking::from_scores(matrix.alternatives(), scores))
}

/// MABAC: signed distance from the border approximation area.
///
/// Scores can be negative. A constant column normalizes to 0.5 for every
/// alternative and contributes nothing.
pub fn mabac_scores(
    matrix: &DecisionMatrix,
    weights: &WeightVector,
) -> Result<Ranking, DecisionError> {
    check_weights(matrix, weights)?;
    let (m, n) = (matrix.rows(), matrix.cols());
    let w = weights.as_slice();

    let mut scores = vec![0.0; m];
    for j in 0..n {
        let lo = matrix.column(j).fold(f64::MAX, f64::min);
        let hi = matrix.column(j).fold(f64::MIN, f64::max);
        let weighted: Vec<f64> = matrix
            .column(j)
            .map(|x| {
                let normalized = if hi == lo {
                    0.5
                } else {
                    match matrix.direction(j) {
                        CriterionDirection::Benefit => (x - lo) / (hi - lo),
                        CriterionDirection::Cost => (x - hi) / (lo - hi),
                    }
                };
                w[j] * (normalized + 1.0)
            })
            .collect();
        let border = if weighted.iter().all(|v| *v == weighted[0]) {
            weighted[0]
        } else {
            // geometric mean; every v >= w_j > 0 here
            (weighted.iter().map(|v| v.ln()).sum::<f64>() / m as f64).exp()
        };
        for (s, v) in scores.iter_mut().zip(&weighted) {
            *s += v - border;
        }
    }
    Ok(Ranking::from_scores(matrix.alternatives(), scores))
}

/// The three ranking methods, for callers that pick one at runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McdmMethod {
    Edas,
    Aras,
    Mabac,
}

impl McdmMethod {
    pub fn rank(
        self,
        matrix: &DecisionMatrix,
        weights: &WeightVector,
    ) -> Result<Ranking, DecisionError> {
        match self {
            McdmMethod::Edas => edas_scores(matrix, weights),
            McdmMethod::Aras => aras_scores(matrix, weights),
            McdmMethod::Mabac => mabac_scores(matrix, weights),
        }
    }
}
