//! Cosine-distance clustering of action-value vectors.
//!
//! Observations whose action-value vectors point in the same direction can
//! share one decision-tree action at no return cost, so the clustering
//! objective is directional: the dissimilarity between a vector and its
//! cluster center is the cosine distance `1 - cos(v, c)` (range `[0, 2]`,
//! symmetric, zero exactly on positively-proportional pairs; the triangle
//! inequality is deliberately not claimed). Cluster centers are the
//! visitation-weighted means of their members' raw vectors, and the quality
//! number everything downstream consumes is
//!
//! `epsilon = sum_l d(l) * sum_{o in l} d_l(o) * (1 - cos(v_o, center_l))`,
//!
//! the visitation-averaged cosine distance. `epsilon` drives the certified
//! return-gap bound, so it is always measured under cosine even when the
//! fitting metric is swapped out (the Euclidean/Manhattan variants exist
//! solely for ablation).
//!
//! Fitting alternates a soft assignment `softmax(-D(v, c)/tau)` with a
//! weighted center recomputation, descending a locality term (cosine-scaled
//! disagreement of soft assignments between nearest neighbors) minus a
//! mutual-information regularizer `lambda * (H(labels) - H(labels|obs))`.
//! Steps that would increase the objective are rejected, so the recorded
//! objective trace is non-increasing by construction; several deterministic
//! restarts are run and the lowest-epsilon model wins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qvec::ActionValueVector;
use crate::rng::stream_rng;
use crate::scalar::Scalar;

/// Artifact version tag for serialized cluster models.
pub const CLUSTER_VERSION: u32 = 1;

/// Dissimilarity used while fitting. `epsilon` reporting stays cosine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
    Manhattan,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
            Metric::Manhattan => "manhattan",
        }
    }
}

/// Cosine distance `1 - a.b / (|a||b|)`. Errors on dimension mismatch and on
/// zero-norm inputs (the direction of a zero vector is undefined).
pub fn cosine_distance<S: Scalar>(a: &[S], b: &[S]) -> Result<S> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine distance",
            left: a.len(),
            right: b.len(),
        });
    }
    // Identical inputs short-circuit to an exact zero: `sqrt(n)^2` can land
    // one ulp away from `n`, which would otherwise leak roundoff into the
    // self-distance.
    if a == b {
        if a.iter().all(|&x| x == S::zero()) {
            return Err(Error::ZeroNormVector { observation: 0 });
        }
        return Ok(S::zero());
    }
    let mut dot = S::zero();
    let mut na = S::zero();
    let mut nb = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == S::zero() || nb == S::zero() {
        return Err(Error::ZeroNormVector { observation: 0 });
    }
    let cos = dot / (na.sqrt() * nb.sqrt());
    // Clamp roundoff drift so the result stays inside [0, 2].
    Ok(S::one() - cos.min(S::one()).max(-S::one()))
}

/// Distance under the selected fitting metric.
pub fn metric_distance<S: Scalar>(metric: Metric, a: &[S], b: &[S]) -> Result<S> {
    match metric {
        Metric::Cosine => cosine_distance(a, b),
        Metric::Euclidean => {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch {
                    context: "euclidean distance",
                    left: a.len(),
                    right: b.len(),
                });
            }
            Ok(a.iter()
                .zip(b)
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum::<S>()
                .sqrt())
        }
        Metric::Manhattan => {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch {
                    context: "manhattan distance",
                    left: a.len(),
                    right: b.len(),
                });
            }
            Ok(a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum::<S>())
        }
    }
}

/// Fitting hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig<S> {
    /// Softmax temperature of the soft assignment.
    pub tau: S,
    /// Weight of the mutual-information regularizer.
    pub lambda_rim: S,
    /// Neighbors per vector in the locality term.
    pub k3: usize,
    /// Cap on alternating iterations per restart.
    pub max_iters: usize,
    /// Relative objective improvement below which a restart stops.
    pub tol: S,
    /// Deterministic restarts; the lowest-epsilon model is returned.
    pub n_restarts: usize,
    pub seed: u64,
    pub metric: Metric,
}

impl<S: Scalar> Default for FitConfig<S> {
    fn default() -> Self {
        FitConfig {
            tau: S::of(0.1),
            lambda_rim: S::of(1.0),
            k3: 5,
            max_iters: 100,
            tol: S::of(1e-9),
            n_restarts: 4,
            seed: 0,
            metric: Metric::Cosine,
        }
    }
}

/// A fitted clustering of action-value vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel<S> {
    pub version: u32,
    pub n_labels: usize,
    /// Visitation-weighted means of the members' raw vectors.
    pub centers: Vec<Vec<S>>,
    /// Hard label per input vector (argmax of `soft`, lowest-label ties).
    pub assignment: Vec<usize>,
    /// Final soft assignment rows; each sums to 1.
    pub soft: Vec<Vec<S>>,
    /// Input visitation weights, as given (possibly a subprobability).
    pub weights: Vec<S>,
    /// Own-cell index per input vector, for traceability.
    pub member_cells: Vec<usize>,
    /// Visitation-averaged cosine distance per label.
    pub epsilon_per_label: Vec<S>,
    /// Total visitation-averaged cosine distance (the bound's epsilon).
    pub epsilon: S,
    /// Visitation mass per label.
    pub label_mass: Vec<S>,
    /// Accepted objective values of the winning restart, in order.
    pub objective_trace: Vec<S>,
    /// Objective traces of every restart (each non-increasing).
    pub all_traces: Vec<Vec<S>>,
    /// Number of empty-cluster / degenerate-center repairs performed.
    pub repairs: usize,
    pub seed: u64,
    pub metric: Metric,
}

impl<S: Scalar> ClusterModel<S> {
    pub fn to_json(&self) -> Result<String>
    where
        S: Serialize,
    {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self>
    where
        S: for<'de> Deserialize<'de>,
    {
        let model: ClusterModel<S> = serde_json::from_str(text)?;
        if model.version != CLUSTER_VERSION {
            return Err(Error::UnsupportedVersion {
                context: "cluster model",
                found: model.version,
                expected: CLUSTER_VERSION,
            });
        }
        Ok(model)
    }
}

/// Epsilon of an arbitrary assignment: centers are recomputed as weighted
/// means and the visitation-averaged cosine distance is returned, broken
/// down per label. Weights are used as given (a subprobability is fine; the
/// result is then the subprobability-weighted average, which is what the
/// return-gap bound consumes).
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonBreakdown<S> {
    pub epsilon: S,
    pub per_label: Vec<S>,
    pub label_mass: Vec<S>,
    pub centers: Vec<Vec<S>>,
}

/// Compute [`EpsilonBreakdown`] for `assignment` (label per vector).
///
/// A label whose weighted member vectors cancel to an exactly zero center
/// has no defined direction; its members are charged the neutral cosine
/// distance 1. This cannot happen for component-wise nonnegative tables and
/// is surfaced only as a conservative fallback.
pub fn epsilon_of<S: Scalar>(
    vectors: &[ActionValueVector<S>],
    assignment: &[usize],
    n_labels: usize,
) -> Result<EpsilonBreakdown<S>> {
    if vectors.len() != assignment.len() {
        return Err(Error::DimensionMismatch {
            context: "epsilon assignment",
            left: vectors.len(),
            right: assignment.len(),
        });
    }
    if vectors.is_empty() {
        return Err(Error::InvalidArgument("epsilon of an empty set".into()));
    }
    let dim = vectors[0].components.len();
    for v in vectors {
        if v.components.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "epsilon vectors",
                left: v.components.len(),
                right: dim,
            });
        }
        if v.is_zero_norm() {
            return Err(Error::ZeroNormVector {
                observation: v.own_cell,
            });
        }
    }
    if let Some(&bad) = assignment.iter().find(|&&l| l >= n_labels) {
        return Err(Error::InvalidArgument(format!(
            "assignment label {bad} out of range for {n_labels} labels"
        )));
    }

    let mut label_mass = vec![S::zero(); n_labels];
    for (v, &l) in vectors.iter().zip(assignment) {
        label_mass[l] += v.weight;
    }
    let mut centers = vec![vec![S::zero(); dim]; n_labels];
    for (v, &l) in vectors.iter().zip(assignment) {
        if label_mass[l] == S::zero() {
            continue;
        }
        let share = v.weight / label_mass[l];
        for (c, &x) in centers[l].iter_mut().zip(&v.components) {
            *c += share * x;
        }
    }
    let mut per_label = vec![S::zero(); n_labels];
    let mut epsilon = S::zero();
    for (v, &l) in vectors.iter().zip(assignment) {
        let d = match cosine_distance(&v.components, &centers[l]) {
            Ok(d) => d,
            Err(Error::ZeroNormVector { .. }) => S::one(),
            Err(e) => return Err(e),
        };
        epsilon += v.weight * d;
        if label_mass[l] > S::zero() {
            per_label[l] += v.weight / label_mass[l] * d;
        }
    }
    Ok(EpsilonBreakdown {
        epsilon,
        per_label,
        label_mass,
        centers,
    })
}

/// Count directions that differ by more than `tol` in cosine distance.
fn distinct_directions<S: Scalar>(vectors: &[ActionValueVector<S>], tol: S) -> Result<usize> {
    let mut reps: Vec<&[S]> = Vec::new();
    for v in vectors {
        let mut matched = false;
        for r in &reps {
            if cosine_distance(r, &v.components)? <= tol {
                matched = true;
                break;
            }
        }
        if !matched {
            reps.push(&v.components);
        }
    }
    Ok(reps.len())
}

struct Working<S> {
    soft: Vec<Vec<S>>,
    hard: Vec<usize>,
    repairs: usize,
}

/// Fit `n_labels` clusters to the vectors.
///
/// Preconditions: `2 <= n_labels <= vectors.len()`, every vector has the
/// same dimension and a nonzero norm, and the data carries at least
/// `n_labels` distinct directions (otherwise [`Error::TooFewDirections`]).
pub fn fit<S: Scalar>(
    vectors: &[ActionValueVector<S>],
    n_labels: usize,
    cfg: &FitConfig<S>,
) -> Result<ClusterModel<S>> {
    if n_labels < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_labels must be at least 2, got {n_labels}"
        )));
    }
    if vectors.len() < n_labels {
        return Err(Error::InvalidArgument(format!(
            "{} vectors cannot support {n_labels} labels",
            vectors.len()
        )));
    }
    let dim = vectors[0].components.len();
    for v in vectors {
        if v.components.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "fit vectors",
                left: v.components.len(),
                right: dim,
            });
        }
        if v.is_zero_norm() {
            return Err(Error::ZeroNormVector {
                observation: v.own_cell,
            });
        }
        if v.weight <= S::zero() {
            return Err(Error::InvalidArgument(format!(
                "vector for cell {} has non-positive visitation weight",
                v.own_cell
            )));
        }
    }
    let distinct = distinct_directions(vectors, S::of(1e-12))?;
    if distinct < n_labels {
        return Err(Error::TooFewDirections {
            distinct,
            requested: n_labels,
        });
    }

    let n = vectors.len();
    let k3 = cfg.k3.min(n.saturating_sub(1));
    // Directed nearest-neighbor lists under the fitting metric, with the
    // pair distances cached for the locality term.
    let mut neighbors: Vec<Vec<(usize, S)>> = Vec::with_capacity(n);
    for p in 0..n {
        let mut dists: Vec<(usize, S)> = (0..n)
            .filter(|&q| q != p)
            .map(|q| {
                let d = metric_distance(cfg.metric, &vectors[p].components, &vectors[q].components)
                    .expect("validated dimensions");
                (q, d)
            })
            .collect();
        dists.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        dists.truncate(k3);
        neighbors.push(dists);
    }
    let total_weight: S = vectors.iter().map(|v| v.weight).sum();

    let objective = |soft: &[Vec<S>]| -> S {
        let mut loc = S::zero();
        for (p, nns) in neighbors.iter().enumerate() {
            for &(q, d) in nns {
                let diff: S = soft[p]
                    .iter()
                    .zip(&soft[q])
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                loc += d * diff;
            }
        }
        let mut mean = vec![S::zero(); n_labels];
        let mut h_cond = S::zero();
        for (v, row) in vectors.iter().zip(soft) {
            let w = v.weight / total_weight;
            let mut h_row = S::zero();
            for (m, &s) in mean.iter_mut().zip(row) {
                *m += w * s;
                if s > S::zero() {
                    h_row -= s * s.ln();
                }
            }
            h_cond += w * h_row;
        }
        let mut h_mean = S::zero();
        for &m in &mean {
            if m > S::zero() {
                h_mean -= m * m.ln();
            }
        }
        loc - cfg.lambda_rim * (h_mean - h_cond)
    };

    let soft_assign = |centers: &[Vec<S>]| -> Vec<Vec<S>> {
        vectors
            .iter()
            .map(|v| {
                let d: Vec<S> = centers
                    .iter()
                    .map(|c| {
                        metric_distance(cfg.metric, &v.components, c)
                            .unwrap_or_else(|_| S::of(2.0))
                    })
                    .collect();
                let dmin = d.iter().copied().fold(S::infinity(), S::min);
                let mut row: Vec<S> =
                    d.iter().map(|&x| ((dmin - x) / cfg.tau).exp()).collect();
                let z: S = row.iter().copied().sum();
                for r in &mut row {
                    *r /= z;
                }
                row
            })
            .collect()
    };

    let hard_of = |soft: &[Vec<S>]| -> Vec<usize> {
        soft.iter()
            .map(|row| crate::oracle::argmax_lowest(row))
            .collect()
    };

    // Weighted-mean centers; empty labels and exactly-cancelled centers are
    // repaired by reseeding at the member farthest from its current center.
    let recompute_centers = |hard: &mut Vec<usize>, repairs: &mut usize| -> Vec<Vec<S>> {
        loop {
            let mut mass = vec![S::zero(); n_labels];
            for (v, &l) in vectors.iter().zip(hard.iter()) {
                mass[l] += v.weight;
            }
            let mut centers = vec![vec![S::zero(); dim]; n_labels];
            for (v, &l) in vectors.iter().zip(hard.iter()) {
                let share = v.weight / mass[l];
                for (c, &x) in centers[l].iter_mut().zip(&v.components) {
                    *c += share * x;
                }
            }
            let degenerate = (0..n_labels).find(|&l| {
                mass[l] == S::zero()
                    || centers[l].iter().map(|&c| c * c).sum::<S>().sqrt() <= S::of(1e-300)
            });
            match degenerate {
                None => return centers,
                Some(l) => {
                    // Move the globally worst-explained member into label l.
                    let mut worst = (0usize, S::neg_infinity());
                    for (i, (v, &li)) in vectors.iter().zip(hard.iter()).enumerate() {
                        if li == l {
                            continue;
                        }
                        let d = cosine_distance(&v.components, &centers[li])
                            .unwrap_or_else(|_| S::of(2.0));
                        if d > worst.1 {
                            worst = (i, d);
                        }
                    }
                    hard[worst.0] = l;
                    *repairs += 1;
                }
            }
        }
    };

    let farthest_point_init = |restart: u64| -> Vec<Vec<S>> {
        use rand::Rng;
        let mut rng = stream_rng(cfg.seed, restart);
        let u: f64 = rng.gen();
        // Weighted draw of the first center.
        let mut first = 0usize;
        let mut acc = S::zero();
        let threshold = S::of(u) * total_weight;
        for (i, v) in vectors.iter().enumerate() {
            acc += v.weight;
            first = i;
            if acc > threshold {
                break;
            }
        }
        let mut chosen = vec![first];
        while chosen.len() < n_labels {
            let mut best = (usize::MAX, S::neg_infinity());
            for (i, v) in vectors.iter().enumerate() {
                if chosen.contains(&i) {
                    continue;
                }
                let dmin = chosen
                    .iter()
                    .map(|&c| {
                        metric_distance(cfg.metric, &v.components, &vectors[c].components)
                            .expect("validated dimensions")
                    })
                    .fold(S::infinity(), S::min);
                if dmin > best.1 {
                    best = (i, dmin);
                }
            }
            chosen.push(best.0);
        }
        chosen
            .into_iter()
            .map(|i| vectors[i].components.clone())
            .collect()
    };

    let mut best: Option<(S, Working<S>, Vec<S>)> = None;
    let mut all_traces: Vec<Vec<S>> = Vec::with_capacity(cfg.n_restarts.max(1));
    for restart in 0..cfg.n_restarts.max(1) as u64 {
        let mut centers = farthest_point_init(restart);
        let mut soft = soft_assign(&centers);
        let mut hard = hard_of(&soft);
        let mut repairs = 0usize;
        centers = recompute_centers(&mut hard, &mut repairs);
        let mut obj = objective(&soft);
        let mut trace = vec![obj];
        for _ in 0..cfg.max_iters {
            let new_soft = soft_assign(&centers);
            let new_obj = objective(&new_soft);
            if new_obj > obj {
                break; // reject the step; the trace stays non-increasing
            }
            let improvement = obj - new_obj;
            soft = new_soft;
            hard = hard_of(&soft);
            centers = recompute_centers(&mut hard, &mut repairs);
            obj = new_obj;
            trace.push(obj);
            if improvement <= cfg.tol * obj.abs().max(S::one()) {
                break;
            }
        }
        let breakdown = epsilon_of(vectors, &hard, n_labels)?;
        all_traces.push(trace.clone());
        let candidate_eps = breakdown.epsilon;
        let better = match &best {
            None => true,
            Some((eps, _, _)) => candidate_eps < *eps,
        };
        if better {
            best = Some((
                candidate_eps,
                Working {
                    soft,
                    hard,
                    repairs,
                },
                trace,
            ));
        }
    }

    let (epsilon, working, trace) = best.expect("at least one restart runs");
    let breakdown = epsilon_of(vectors, &working.hard, n_labels)?;
    Ok(ClusterModel {
        version: CLUSTER_VERSION,
        n_labels,
        centers: breakdown.centers,
        assignment: working.hard,
        soft: working.soft,
        weights: vectors.iter().map(|v| v.weight).collect(),
        member_cells: vectors.iter().map(|v| v.own_cell).collect(),
        epsilon_per_label: breakdown.per_label,
        epsilon,
        label_mass: breakdown.label_mass,
        objective_trace: trace,
        all_traces,
        repairs: working.repairs,
        seed: cfg.seed,
        metric: cfg.metric,
    })
}

/// Refine a fitted clustering by splitting one label in two: the label with
/// the largest epsilon contribution is re-fit with two labels (falling back
/// to peeling its farthest member if the re-fit cannot improve), producing a
/// nested `(n_labels + 1)`-assignment.
///
/// Returns the refined assignment; callers re-derive centers/epsilon via
/// [`epsilon_of`].
pub fn refine_split<S: Scalar>(
    vectors: &[ActionValueVector<S>],
    assignment: &[usize],
    n_labels: usize,
    cfg: &FitConfig<S>,
) -> Result<Vec<usize>> {
    let breakdown = epsilon_of(vectors, assignment, n_labels)?;
    // Pick the label with the largest mass-weighted epsilon contribution
    // among labels with at least two distinct directions.
    let mut order: Vec<usize> = (0..n_labels).collect();
    order.sort_by(|&a, &b| {
        let ca = breakdown.per_label[a] * breakdown.label_mass[a];
        let cb = breakdown.per_label[b] * breakdown.label_mass[b];
        cb.partial_cmp(&ca).unwrap().then(a.cmp(&b))
    });
    for &target in &order {
        let member_idx: Vec<usize> = (0..vectors.len())
            .filter(|&i| assignment[i] == target)
            .collect();
        if member_idx.len() < 2 {
            continue;
        }
        let members: Vec<ActionValueVector<S>> =
            member_idx.iter().map(|&i| vectors[i].clone()).collect();
        if distinct_directions(&members, S::of(1e-12))? < 2 {
            continue;
        }
        let parent_contrib: S = members
            .iter()
            .map(|v| {
                v.weight
                    * cosine_distance(&v.components, &breakdown.centers[target])
                        .unwrap_or_else(|_| S::one())
            })
            .sum();

        // Candidate A: 2-way re-fit of the members.
        let fit2 = fit(&members, 2, cfg).ok();
        // Candidate B: peel the member farthest from the parent center.
        let peel: Vec<usize> = {
            let mut worst = (0usize, S::neg_infinity());
            for (k, v) in members.iter().enumerate() {
                let d = cosine_distance(&v.components, &breakdown.centers[target])
                    .unwrap_or_else(|_| S::of(2.0));
                if d > worst.1 {
                    worst = (k, d);
                }
            }
            (0..members.len())
                .map(|k| if k == worst.0 { 1 } else { 0 })
                .collect()
        };
        let contrib_of = |labels: &[usize]| -> Result<S> {
            let b = epsilon_of(&members, labels, 2)?;
            Ok(b.epsilon)
        };
        let peel_contrib = contrib_of(&peel)?;
        let (sub_assign, sub_contrib) = match fit2 {
            Some(model) => {
                let c = contrib_of(&model.assignment)?;
                if c <= peel_contrib {
                    (model.assignment, c)
                } else {
                    (peel, peel_contrib)
                }
            }
            None => (peel, peel_contrib),
        };
        // Only accept a genuine refinement; otherwise try the next label.
        if sub_contrib <= parent_contrib + S::of(1e-12) {
            let mut refined = assignment.to_vec();
            for (k, &i) in member_idx.iter().enumerate() {
                if sub_assign[k] == 1 {
                    refined[i] = n_labels;
                }
            }
            return Ok(refined);
        }
    }
    Err(Error::TooFewDirections {
        distinct: n_labels,
        requested: n_labels + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qvec::ActionSource;
    use proptest::prelude::*;
    use rand::Rng;

    fn vec_of(cell: usize, components: Vec<f64>, weight: f64) -> ActionValueVector<f64> {
        let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
        ActionValueVector {
            agent: 0,
            own_cell: cell,
            components,
            weight,
            norm,
            pinned_action: None,
            source: ActionSource::OwnEnumeration,
        }
    }

    #[test]
    fn cosine_distance_basics() {
        let d: f64 = cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
        let d: f64 = cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        assert!((d - 2.0).abs() < 1e-15);
        let d: f64 = cosine_distance(&[1.0, 2.0], &[2.0, 4.0]).unwrap();
        assert!(d.abs() < 1e-15);
        assert!(matches!(
            cosine_distance::<f64>(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNormVector { .. })
        ));
        assert!(matches!(
            cosine_distance::<f64>(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn epsilon_matches_hand_computation() {
        // Two clusters of two vectors each, uniform weight 1/4.
        // Cluster 0: [1,0], [1,1] -> center [1, 0.5];
        //   cos = 2/sqrt(5) and 1.5/sqrt(2.5).
        // Cluster 1: [0,1], [-1,1] -> center [-0.5, 1]; same cosines by
        //   symmetry. Hand value: 0.25 * 2 * (0.10557280900008412
        //   + 0.05131670194948623) = 0.07844475547478517.
        let vectors = vec![
            vec_of(0, vec![1.0, 0.0], 0.25),
            vec_of(1, vec![1.0, 1.0], 0.25),
            vec_of(2, vec![0.0, 1.0], 0.25),
            vec_of(3, vec![-1.0, 1.0], 0.25),
        ];
        let b = epsilon_of(&vectors, &[0, 0, 1, 1], 2).unwrap();
        assert!((b.epsilon - 0.07844475547478517).abs() <= 1e-12);
        // per_label holds the within-label weighted mean; both labels match
        // the global value here because the two clusters are symmetric.
        assert!((b.per_label[0] - 0.07844475547478517).abs() <= 1e-12);
        assert!((b.per_label[1] - 0.07844475547478517).abs() <= 1e-12);
        assert_eq!(b.centers[0], vec![1.0, 0.5]);
        assert_eq!(b.centers[1], vec![-0.5, 1.0]);
        assert!((b.label_mass[0] - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn perfect_directional_clustering_has_zero_epsilon() {
        let vectors = vec![
            vec_of(0, vec![1.0, 0.0], 0.25),
            vec_of(1, vec![2.0, 0.0], 0.25),
            vec_of(2, vec![0.0, 3.0], 0.25),
            vec_of(3, vec![0.0, 1.0], 0.25),
        ];
        let b = epsilon_of(&vectors, &[0, 0, 1, 1], 2).unwrap();
        assert!(b.epsilon.abs() <= 1e-15);
    }

    fn planted_directions(
        n_groups: usize,
        per_group: usize,
        noise: f64,
        seed: u64,
    ) -> Vec<ActionValueVector<f64>> {
        let mut rng = stream_rng(seed, 0);
        let dim = 4;
        let mut base: Vec<Vec<f64>> = Vec::new();
        for g in 0..n_groups {
            let mut v = vec![0.1; dim];
            v[g % dim] = 1.0;
            v[(g + 1) % dim] = 0.4 * (g as f64 + 1.0);
            base.push(v);
        }
        let mut out = Vec::new();
        let w = 1.0 / (n_groups * per_group) as f64;
        for (g, b) in base.iter().enumerate() {
            for k in 0..per_group {
                let scale = 0.5 + rng.gen::<f64>() * 2.0;
                let comps: Vec<f64> = b
                    .iter()
                    .map(|&x| (x + noise * (rng.gen::<f64>() - 0.5)) * scale)
                    .collect();
                out.push(vec_of(g * per_group + k, comps, w));
            }
        }
        out
    }

    #[test]
    fn fit_beats_random_assignments_on_planted_data() {
        let vectors = planted_directions(3, 4, 0.05, 9);
        let model = fit(&vectors, 3, &FitConfig::default()).unwrap();
        // 200 seeded random assignments as an independent baseline.
        let mut rng = stream_rng(99, 1);
        let mut best_random = f64::INFINITY;
        for _ in 0..200 {
            let assignment: Vec<usize> =
                (0..vectors.len()).map(|_| rng.gen_range(0..3)).collect();
            if (0..3).any(|l| !assignment.contains(&l)) {
                continue;
            }
            let b = epsilon_of(&vectors, &assignment, 3).unwrap();
            best_random = best_random.min(b.epsilon);
        }
        assert!(
            model.epsilon <= best_random + 1e-12,
            "fit epsilon {} vs best random {}",
            model.epsilon,
            best_random
        );
    }

    #[test]
    fn fit_is_deterministic_given_seed() {
        let vectors = planted_directions(3, 5, 0.1, 4);
        let cfg = FitConfig {
            seed: 12,
            ..FitConfig::default()
        };
        let a = fit(&vectors, 3, &cfg).unwrap();
        let b = fit(&vectors, 3, &cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn objective_traces_never_increase() {
        for seed in 0..20u64 {
            let vectors = planted_directions(3, 4, 0.4, seed);
            let model = fit(
                &vectors,
                3,
                &FitConfig {
                    seed,
                    ..FitConfig::default()
                },
            )
            .unwrap();
            for trace in &model.all_traces {
                for w in trace.windows(2) {
                    assert!(
                        w[1] <= w[0] + 1e-12,
                        "objective increased: {} -> {}",
                        w[0],
                        w[1]
                    );
                }
            }
        }
    }

    #[test]
    fn scaled_copies_share_a_label_under_cosine() {
        let mut vectors = planted_directions(2, 3, 0.0, 7);
        // Append an exact positive rescale of the first vector.
        let mut dup = vectors[0].clone();
        dup.own_cell = 999;
        for c in &mut dup.components {
            *c *= 17.5;
        }
        dup.norm *= 17.5;
        vectors.push(dup);
        let model = fit(&vectors, 2, &FitConfig::default()).unwrap();
        let last = model.assignment[vectors.len() - 1];
        assert_eq!(model.assignment[0], last);
    }

    #[test]
    fn rejects_too_few_directions_and_zero_norms() {
        let same_dir = vec![
            vec_of(0, vec![1.0, 0.0], 0.5),
            vec_of(1, vec![2.0, 0.0], 0.5),
        ];
        assert!(matches!(
            fit(&same_dir, 2, &FitConfig::default()),
            Err(Error::TooFewDirections {
                distinct: 1,
                requested: 2
            })
        ));

        let with_zero = vec![
            vec_of(0, vec![1.0, 0.0], 0.5),
            vec_of(7, vec![0.0, 0.0], 0.5),
        ];
        let err = fit(&with_zero, 2, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ZeroNormVector { observation: 7 }));
    }

    #[test]
    fn soft_rows_are_distributions_and_labels_nonempty() {
        let vectors = planted_directions(3, 6, 0.3, 21);
        let model = fit(&vectors, 3, &FitConfig::default()).unwrap();
        for row in &model.soft {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() <= 1e-9);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
        for l in 0..3 {
            assert!(model.assignment.contains(&l), "label {l} is empty");
        }
        assert_eq!(
            model.assignment,
            model
                .soft
                .iter()
                .map(|r| crate::oracle::argmax_lowest(r))
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn centers_are_weighted_means_of_members() {
        let vectors = planted_directions(3, 5, 0.2, 33);
        let model = fit(&vectors, 3, &FitConfig::default()).unwrap();
        for l in 0..3 {
            let mass: f64 = vectors
                .iter()
                .zip(&model.assignment)
                .filter(|(_, &li)| li == l)
                .map(|(v, _)| v.weight)
                .sum();
            let dim = vectors[0].components.len();
            let mut expect = vec![0.0; dim];
            for (v, &li) in vectors.iter().zip(&model.assignment) {
                if li == l {
                    for (e, &c) in expect.iter_mut().zip(&v.components) {
                        *e += v.weight / mass * c;
                    }
                }
            }
            for (a, b) in expect.iter().zip(&model.centers[l]) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn nested_refinement_does_not_increase_epsilon() {
        for seed in 0..10u64 {
            let vectors = planted_directions(4, 4, 0.5, 100 + seed);
            let cfg = FitConfig {
                seed,
                ..FitConfig::default()
            };
            let model = fit(&vectors, 2, &cfg).unwrap();
            let mut assignment = model.assignment.clone();
            let mut n_labels = 2;
            let mut eps = model.epsilon;
            while n_labels < 6 {
                let refined = match refine_split(&vectors, &assignment, n_labels, &cfg) {
                    Ok(r) => r,
                    Err(Error::TooFewDirections { .. }) => break,
                    Err(e) => panic!("{e}"),
                };
                n_labels += 1;
                let b = epsilon_of(&vectors, &refined, n_labels).unwrap();
                assert!(
                    b.epsilon <= eps + 1e-12,
                    "refinement raised epsilon {} -> {} at L={}",
                    eps,
                    b.epsilon,
                    n_labels
                );
                eps = b.epsilon;
                assignment = refined;
            }
            assert!(n_labels > 2, "no refinement performed");
        }
    }

    #[test]
    fn model_serialization_round_trips_with_version_check() {
        let vectors = planted_directions(2, 4, 0.2, 5);
        let model = fit(&vectors, 2, &FitConfig::default()).unwrap();
        let text = model.to_json().unwrap();
        let back = ClusterModel::<f64>::from_json(&text).unwrap();
        assert_eq!(model, back);

        let mut tampered: serde_json::Value = serde_json::from_str(&text).unwrap();
        tampered["version"] = serde_json::json!(3);
        assert!(matches!(
            ClusterModel::<f64>::from_json(&tampered.to_string()),
            Err(Error::UnsupportedVersion { found: 3, .. })
        ));
    }

    proptest! {
        #[test]
        fn cosine_distance_is_a_bounded_symmetric_scale_invariant_dissimilarity(
            a in proptest::collection::vec(-10.0f64..10.0, 3),
            b in proptest::collection::vec(-10.0f64..10.0, 3),
            scale in 0.01f64..100.0,
        ) {
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>();
            prop_assume!(na > 1e-6 && nb > 1e-6);
            let dab = cosine_distance(&a, &b).unwrap();
            let dba = cosine_distance(&b, &a).unwrap();
            prop_assert!((dab - dba).abs() <= 1e-12);
            prop_assert!((0.0..=2.0).contains(&dab));
            prop_assert!(cosine_distance(&a, &a).unwrap() == 0.0, "self-distance must be exactly zero");
            let scaled: Vec<f64> = a.iter().map(|&x| x * scale).collect();
            let ds = cosine_distance(&scaled, &b).unwrap();
            prop_assert!((dab - ds).abs() <= 1e-9);
        }
    }
}
