//! Oblique decision trees with SVM hyperplane splits.
//!
//! Internal nodes hold a soft-margin linear SVM hyperplane `w . x - p = 0`
//! over normalized observation features; an observation routes left when
//! `w . x - p < 0` and right otherwise (boundary points go right). Leaves
//! hold one action. Trees are grown breadth-first one level per stage under
//! a leaf budget: within a stage, frontier nodes are split in order of
//! descending epsilon contribution (the visitation-weighted cosine spread of
//! their member action-value vectors), each split re-clustering the node's
//! members into two directional groups and training an SVM to separate them
//! in feature space.
//!
//! The SVM dual is solved by sequential minimal optimization with
//! maximal-violating-pair working-set selection. Pairwise updates keep the
//! equality constraint `sum_i alpha_i y_i = 0` satisfied to machine
//! precision at every step.

use serde::{Deserialize, Serialize};

use crate::cluster::{self, FitConfig};
use crate::env::{Action, FeatureEncoding};
use crate::error::{Error, Result};
use crate::oracle::argmax_lowest;
use crate::qvec::ActionValueVector;
use crate::rng::derive_seed;
use crate::scalar::Scalar;

/// Artifact version tag for serialized trees.
pub const TREE_VERSION: u32 = 1;

/// Soft-margin SVM hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig<S> {
    /// Box constraint. Larger values approach hard-margin behavior.
    pub c: S,
    /// KKT violation (`m(alpha) - M(alpha)`) below which the solver stops.
    pub tol: S,
    /// Cap on pairwise updates.
    pub max_pair_updates: usize,
}

impl<S: Scalar> Default for SvmConfig<S> {
    fn default() -> Self {
        SvmConfig {
            c: S::of(10.0),
            tol: S::of(1e-9),
            max_pair_updates: 500_000,
        }
    }
}

/// A trained separating hyperplane `w . x - p = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane<S> {
    pub w: Vec<S>,
    pub p: S,
    /// Geometric margin `min_i y_i (w . x_i - p) / |w|` on the training set.
    pub margin: S,
    /// Number of training points.
    pub trained_on: usize,
}

impl<S: Scalar> Hyperplane<S> {
    /// Signed decision value; negative routes left, nonnegative right.
    pub fn decision(&self, x: &[S]) -> S {
        self.w
            .iter()
            .zip(x)
            .map(|(&wi, &xi)| wi * xi)
            .sum::<S>()
            - self.p
    }

    pub fn norm(&self) -> S {
        self.w.iter().map(|&wi| wi * wi).sum::<S>().sqrt()
    }
}

/// Full result of an SVM training run. Trees keep only the plane; the dual
/// variables are exposed for feasibility checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmOutcome<S> {
    pub plane: Hyperplane<S>,
    pub alphas: Vec<S>,
    /// `sum_i alpha_i y_i`; zero up to float drift by construction.
    pub sum_alpha_y: S,
    pub pair_updates: usize,
}

/// Train a soft-margin linear SVM on `points` with labels `+1`/`-1`.
pub fn train_svm<S: Scalar>(
    points: &[Vec<S>],
    labels: &[i8],
    cfg: &SvmConfig<S>,
) -> Result<SvmOutcome<S>> {
    if points.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "svm labels",
            left: points.len(),
            right: labels.len(),
        });
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("svm on an empty set".into()));
    }
    let dim = points[0].len();
    for x in points {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "svm points",
                left: x.len(),
                right: dim,
            });
        }
    }
    if labels.iter().any(|&l| l != 1 && l != -1) {
        return Err(Error::InvalidArgument(
            "svm labels must be +1 or -1".into(),
        ));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::SingleClassSvm);
    }

    let n = points.len();
    let y: Vec<S> = labels.iter().map(|&l| S::of(l as f64)).collect();
    let dot = |a: &[S], b: &[S]| -> S { a.iter().zip(b).map(|(&u, &v)| u * v).sum() };
    let diag: Vec<S> = points.iter().map(|x| dot(x, x)).collect();

    let mut alpha = vec![S::zero(); n];
    // f[t] = w . x_t, maintained incrementally alongside w.
    let mut w = vec![S::zero(); dim];
    let mut f = vec![S::zero(); n];
    let mut pair_updates = 0usize;

    loop {
        // Maximal violating pair over (y_t - f_t).
        let mut i_best: Option<(usize, S)> = None; // argmax over I_up
        let mut j_best: Option<(usize, S)> = None; // argmin over I_low
        for t in 0..n {
            let v = y[t] - f[t];
            let in_up = (alpha[t] < cfg.c && labels[t] == 1)
                || (alpha[t] > S::zero() && labels[t] == -1);
            let in_low = (alpha[t] < cfg.c && labels[t] == -1)
                || (alpha[t] > S::zero() && labels[t] == 1);
            if in_up && i_best.map_or(true, |(_, b)| v > b) {
                i_best = Some((t, v));
            }
            if in_low && j_best.map_or(true, |(_, b)| v < b) {
                j_best = Some((t, v));
            }
        }
        let ((i, m), (j, m_low)) = match (i_best, j_best) {
            (Some(a), Some(b)) => (a, b),
            _ => break,
        };
        if m - m_low <= cfg.tol || pair_updates >= cfg.max_pair_updates {
            break;
        }

        // Coincident points give eta = 0; regularize so the step is taken
        // anyway and the box clip bounds it (the usual tau workaround).
        let eta = (diag[i] + diag[j] - S::of(2.0) * dot(&points[i], &points[j]))
            .max(S::of(1e-12));
        let (lo, hi) = if labels[i] != labels[j] {
            let d = alpha[j] - alpha[i];
            (d.max(S::zero()), (cfg.c + d).min(cfg.c))
        } else {
            let s = alpha[i] + alpha[j];
            ((s - cfg.c).max(S::zero()), s.min(cfg.c))
        };
        let e_i = f[i] - y[i];
        let e_j = f[j] - y[j];
        let a_j_new = (alpha[j] + y[j] * (e_i - e_j) / eta).max(lo).min(hi);
        let delta_j = a_j_new - alpha[j];
        if delta_j.abs() <= S::of(1e-15) {
            break;
        }
        let delta_i = -y[i] * y[j] * delta_j;
        alpha[i] += delta_i;
        alpha[j] = a_j_new;
        // Snap float drift onto the box bounds: the working-set definition
        // compares against exact 0 and C, and a multiplier stranded 1e-22
        // inside the box would otherwise admit only degenerate steps.
        for t in [i, j] {
            if alpha[t].abs() <= S::of(1e-12) {
                alpha[t] = S::zero();
            } else if (cfg.c - alpha[t]).abs() <= cfg.c * S::of(1e-14) {
                alpha[t] = cfg.c;
            }
        }
        for d in 0..dim {
            w[d] += delta_i * y[i] * points[i][d] + delta_j * y[j] * points[j][d];
        }
        for t in 0..n {
            f[t] += delta_i * y[i] * dot(&points[i], &points[t])
                + delta_j * y[j] * dot(&points[j], &points[t]);
        }
        pair_updates += 1;
    }

    // Bias from KKT: mean over free support vectors, else the midpoint of
    // the feasible interval.
    let mut free_sum = S::zero();
    let mut free_count = 0usize;
    for t in 0..n {
        if alpha[t] > S::of(1e-12) && alpha[t] < cfg.c - S::of(1e-12) {
            free_sum += f[t] - y[t];
            free_count += 1;
        }
    }
    let p = if free_count > 0 {
        free_sum / S::of(free_count as f64)
    } else {
        let mut m = S::neg_infinity();
        let mut m_low = S::infinity();
        for t in 0..n {
            let v = y[t] - f[t];
            let in_up = (alpha[t] < cfg.c && labels[t] == 1)
                || (alpha[t] > S::zero() && labels[t] == -1);
            let in_low = (alpha[t] < cfg.c && labels[t] == -1)
                || (alpha[t] > S::zero() && labels[t] == 1);
            if in_up {
                m = m.max(v);
            }
            if in_low {
                m_low = m_low.min(v);
            }
        }
        -(m + m_low) / S::of(2.0)
    };

    let norm = w.iter().map(|&wi| wi * wi).sum::<S>().sqrt();
    let margin = if norm > S::zero() {
        (0..n)
            .map(|t| y[t] * (f[t] - p))
            .fold(S::infinity(), S::min)
            / norm
    } else {
        S::zero()
    };
    let sum_alpha_y: S = alpha.iter().zip(&y).map(|(&a, &yi)| a * yi).sum();
    Ok(SvmOutcome {
        plane: Hyperplane {
            w,
            p,
            margin,
            trained_on: n,
        },
        alphas: alpha,
        sum_alpha_y,
        pair_updates,
    })
}

/// Partition cluster centers into two groups minimizing the mass-weighted
/// within-group cosine scatter. Exhaustive for up to 12 centers, otherwise a
/// 2-way re-fit of the centers. Returns `true` for group-1 membership.
pub fn group_classes<S: Scalar>(
    centers: &[Vec<S>],
    masses: &[S],
    fit_cfg: &FitConfig<S>,
) -> Result<Vec<bool>> {
    let k = centers.len();
    if k < 2 {
        return Err(Error::InvalidArgument(
            "grouping needs at least two centers".into(),
        ));
    }
    if k != masses.len() {
        return Err(Error::DimensionMismatch {
            context: "group masses",
            left: k,
            right: masses.len(),
        });
    }
    let scatter = |side: &[bool]| -> S {
        let mut total = S::zero();
        for group in [false, true] {
            let mass: S = (0..k)
                .filter(|&c| side[c] == group)
                .map(|c| masses[c])
                .sum();
            if mass <= S::zero() {
                return S::infinity(); // empty group: inadmissible
            }
            let dim = centers[0].len();
            let mut mu = vec![S::zero(); dim];
            for c in 0..k {
                if side[c] == group {
                    for (m, &x) in mu.iter_mut().zip(&centers[c]) {
                        *m += masses[c] / mass * x;
                    }
                }
            }
            for c in 0..k {
                if side[c] == group {
                    let d = cluster::cosine_distance(&centers[c], &mu)
                        .unwrap_or_else(|_| S::one());
                    total += masses[c] * d;
                }
            }
        }
        total
    };

    if k <= 12 {
        let mut best: Option<(S, Vec<bool>)> = None;
        // Center 0 stays in group 0; enumerate the rest.
        for mask in 1..(1u32 << (k - 1)) {
            let side: Vec<bool> = (0..k)
                .map(|c| c > 0 && (mask >> (c - 1)) & 1 == 1)
                .collect();
            let s = scatter(&side);
            if best.as_ref().map_or(true, |(b, _)| s < *b) {
                best = Some((s, side));
            }
        }
        Ok(best.expect("at least one bipartition").1)
    } else {
        let pseudo: Vec<ActionValueVector<S>> = centers
            .iter()
            .zip(masses)
            .enumerate()
            .map(|(c, (center, &mass))| {
                let norm = center.iter().map(|&x| x * x).sum::<S>().sqrt();
                ActionValueVector {
                    agent: 0,
                    own_cell: c,
                    components: center.clone(),
                    weight: mass,
                    norm,
                    pinned_action: None,
                    source: crate::qvec::ActionSource::OwnEnumeration,
                }
            })
            .collect();
        let model = cluster::fit(&pseudo, 2, fit_cfg)?;
        Ok(model.assignment.iter().map(|&l| l == 1).collect())
    }
}

/// How node splits obtain their binary labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthMode {
    /// Re-cluster each node's members into two fresh directional groups.
    PerNode,
    /// Cluster once into the full label budget, then separate label groups.
    Global,
}

/// Seeded label corruption for robustness ablations: each binary split
/// label is flipped independently with probability `prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelNoise {
    pub prob: f64,
    pub seed: u64,
}

/// Tree-growth configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowConfig<S> {
    pub max_leaves: usize,
    pub mode: GrowthMode,
    pub svm: SvmConfig<S>,
    pub fit: FitConfig<S>,
    /// Stop splitting a node whose epsilon contribution is at most this.
    pub purity_delta: Option<S>,
    /// Optional hard depth cap; `None` lets the leaf budget govern.
    pub max_depth: Option<usize>,
    /// Ablation-only corruption of split labels.
    #[serde(default)]
    pub label_noise: Option<LabelNoise>,
    pub seed: u64,
}

impl<S: Scalar> GrowConfig<S> {
    pub fn with_budget(max_leaves: usize, seed: u64) -> Self {
        GrowConfig {
            max_leaves,
            mode: GrowthMode::PerNode,
            svm: SvmConfig::default(),
            fit: FitConfig {
                seed,
                ..FitConfig::default()
            },
            purity_delta: None,
            max_depth: None,
            label_noise: None,
            seed,
        }
    }
}

/// One tree node. Leaves have `split == None` and a meaningful `action`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node<S> {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    /// `(hyperplane, left child, right child)` for internal nodes.
    pub split: Option<(Hyperplane<S>, usize, usize)>,
    /// Leaf action index (own-action space).
    pub action: usize,
    /// Observation cells routed here at growth time.
    pub members: Vec<usize>,
    /// Visitation-weighted cosine spread of the members at growth time.
    pub epsilon_contribution: S,
}

impl<S> Node<S> {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

/// An oblique decision-tree policy over one agent's observation features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree<S> {
    pub version: u32,
    pub agent: usize,
    pub encoding: FeatureEncoding,
    /// Node 0 is the root; children always follow their parent.
    pub nodes: Vec<Node<S>>,
    pub max_leaves: usize,
    pub seed: u64,
}

impl<S: Scalar> DecisionTree<S> {
    /// Leaf node id for a feature vector.
    pub fn route(&self, features: &[S]) -> usize {
        let mut at = 0usize;
        loop {
            match &self.nodes[at].split {
                None => return at,
                Some((plane, left, right)) => {
                    at = if plane.decision(features) < S::zero() {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Action for a feature vector.
    pub fn act_features(&self, features: &[S]) -> usize {
        self.nodes[self.route(features)].action
    }

    /// Action for a raw grid position.
    pub fn act_cell(&self, pos: (u32, u32)) -> usize {
        self.act_features(&self.encoding.encode::<S>(pos))
    }

    /// Leaf node id for a raw grid position.
    pub fn route_cell(&self, pos: (u32, u32)) -> usize {
        self.route(&self.encoding.encode::<S>(pos))
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.is_leaf())
            .map(|n| n.id)
            .collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Dense relabeling of leaf node ids to `0..n_leaves`, in node order.
    pub fn leaf_index_map(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.nodes.len()];
        let mut next = 0usize;
        for n in &self.nodes {
            if n.is_leaf() {
                map[n.id] = Some(next);
                next += 1;
            }
        }
        map
    }

    /// Graphviz rendering with stable node ids, 4-decimal coefficients and
    /// action-named leaves.
    pub fn export_dot(&self) -> String {
        let mut out = String::from("digraph tree {\n  node [shape=box];\n");
        for n in &self.nodes {
            match &n.split {
                Some((plane, left, right)) => {
                    let terms: Vec<String> = plane
                        .w
                        .iter()
                        .enumerate()
                        .map(|(d, &wi)| format!("{:.4}*f{}", wi.as_f64(), d))
                        .collect();
                    out.push_str(&format!(
                        "  n{} [label=\"{} < {:.4}\"];\n",
                        n.id,
                        terms.join(" + "),
                        plane.p.as_f64()
                    ));
                    out.push_str(&format!("  n{} -> n{} [label=\"yes\"];\n", n.id, left));
                    out.push_str(&format!("  n{} -> n{} [label=\"no\"];\n", n.id, right));
                }
                None => {
                    let name = Action::try_from(n.action)
                        .map(|a| a.name())
                        .unwrap_or("invalid");
                    out.push_str(&format!("  n{} [label=\"{}\" shape=oval];\n", n.id, name));
                }
            }
        }
        out.push_str("}\n");
        out
    }

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
        let tree: DecisionTree<S> = serde_json::from_str(text)?;
        if tree.version != TREE_VERSION {
            return Err(Error::UnsupportedVersion {
                context: "decision tree",
                found: tree.version,
                expected: TREE_VERSION,
            });
        }
        Ok(tree)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()>
    where
        S: Serialize,
    {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self>
    where
        S: for<'de> Deserialize<'de>,
    {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Scores per own action for a leaf's members `(cell, weight)`; the leaf
/// takes the lowest-index argmax.
pub type LeafScorer<'a, S> = dyn Fn(&[(usize, S)]) -> Vec<S> + 'a;

fn node_epsilon<S: Scalar>(vectors: &[ActionValueVector<S>], idx: &[usize]) -> S {
    let members: Vec<ActionValueVector<S>> = idx.iter().map(|&i| vectors[i].clone()).collect();
    match cluster::epsilon_of(&members, &vec![0usize; members.len()], 1) {
        Ok(b) => b.epsilon,
        Err(_) => S::zero(),
    }
}

fn distinct_directions_of<S: Scalar>(
    vectors: &[ActionValueVector<S>],
    idx: &[usize],
) -> Result<usize> {
    let mut reps: Vec<&[S]> = Vec::new();
    for &i in idx {
        let v = &vectors[i];
        let mut matched = false;
        for r in &reps {
            if cluster::cosine_distance(r, &v.components)? <= S::of(1e-12) {
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

/// Best axis-aligned threshold split of `pts` under weighted label
/// misclassification. This is the backstop for nodes whose cluster labels no
/// hyperplane separates: the soft-margin SVM then abstains (near-zero `w`, or
/// a plane routing every member to one side), and refusing to split would
/// freeze growth at the node forever. An axis cut chosen against the same
/// binary labels keeps the split targeting the clustering while always
/// partitioning distinct observations; the children re-cluster at the next
/// stage. Ties prefer the lowest feature index, then the lowest threshold.
fn axis_fallback_split<S: Scalar>(
    pts: &[Vec<S>],
    labels: &[i8],
    weights: &[S],
) -> Option<Hyperplane<S>> {
    let dim = pts.first()?.len();
    let mut best: Option<(S, usize, S)> = None;
    for k in 0..dim {
        let mut col: Vec<(S, i8, S)> = pts
            .iter()
            .zip(labels)
            .zip(weights)
            .map(|((x, &l), &w)| (x[k], l, w))
            .collect();
        col.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        let total_pos: S = col.iter().filter(|c| c.1 == 1).map(|c| c.2).sum();
        let total_neg: S = col.iter().filter(|c| c.1 == -1).map(|c| c.2).sum();
        let mut left_pos = S::zero();
        let mut left_neg = S::zero();
        for i in 0..col.len().saturating_sub(1) {
            if col[i].1 == 1 {
                left_pos = left_pos + col[i].2;
            } else {
                left_neg = left_neg + col[i].2;
            }
            if col[i + 1].0 <= col[i].0 {
                continue; // no gap between consecutive values: no threshold
            }
            let thr = (col[i].0 + col[i + 1].0) * S::of(0.5);
            // Misclassified weight for either orientation of the cut.
            let pos_right = left_pos + (total_neg - left_neg);
            let neg_right = left_neg + (total_pos - left_pos);
            let cost = pos_right.min(neg_right);
            if best.as_ref().is_none_or(|&(c, _, _)| cost < c) {
                best = Some((cost, k, thr));
            }
        }
    }
    let (_, k, thr) = best?;
    let mut w = vec![S::zero(); dim];
    w[k] = S::one();
    let margin = pts
        .iter()
        .map(|x| (x[k] - thr).abs())
        .fold(S::infinity(), S::min);
    Some(Hyperplane {
        w,
        p: thr,
        margin,
        trained_on: pts.len(),
    })
}

/// A root-only tree covering the given vectors, ready for staged growth.
pub fn seed_tree<S: Scalar>(
    vectors: &[ActionValueVector<S>],
    encoding: FeatureEncoding,
    agent: usize,
    scorer: &LeafScorer<'_, S>,
    cfg: &GrowConfig<S>,
) -> Result<DecisionTree<S>> {
    if vectors.is_empty() {
        return Err(Error::InvalidArgument("grow on an empty vector set".into()));
    }
    if cfg.max_leaves == 0 {
        return Err(Error::InvalidArgument("max_leaves must be positive".into()));
    }
    for v in vectors {
        if v.is_zero_norm() {
            return Err(Error::ZeroNormVector {
                observation: v.own_cell,
            });
        }
    }
    let all: Vec<usize> = (0..vectors.len()).collect();
    let mut tree = DecisionTree {
        version: TREE_VERSION,
        agent,
        encoding,
        nodes: vec![Node {
            id: 0,
            parent: None,
            depth: 0,
            split: None,
            action: 0,
            members: vectors.iter().map(|v| v.own_cell).collect(),
            epsilon_contribution: node_epsilon(vectors, &all),
        }],
        max_leaves: cfg.max_leaves,
        seed: cfg.seed,
    };
    score_leaves(&mut tree, &[all], vectors, scorer);
    Ok(tree)
}

/// Advance one growth stage: route the current vectors to the leaves,
/// refresh leaf membership and epsilon bookkeeping, split each splittable
/// leaf at most once (largest epsilon contribution first, subject to the
/// leaf budget and depth cap), and re-score every leaf's action.
///
/// Returns the number of new splits. Vectors may differ from the set the
/// tree was grown on; historical splits stay fixed and only leaves evolve,
/// which is what lets multi-agent growth recondition between stages.
pub fn extend_one_level<S: Scalar>(
    tree: &mut DecisionTree<S>,
    vectors: &[ActionValueVector<S>],
    scorer: &LeafScorer<'_, S>,
    cfg: &GrowConfig<S>,
) -> Result<usize> {
    for v in vectors {
        if v.is_zero_norm() {
            return Err(Error::ZeroNormVector {
                observation: v.own_cell,
            });
        }
    }
    let features: Vec<Vec<S>> = vectors
        .iter()
        .map(|v| tree.encoding.encode::<S>(tree.encoding.cell_pos(v.own_cell)))
        .collect();

    // Refresh membership by routing the current vectors.
    let mut member_idx: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes.len()];
    for (i, f) in features.iter().enumerate() {
        member_idx[tree.route(f)].push(i);
    }
    for node in &mut tree.nodes {
        if node.is_leaf() {
            node.members = member_idx[node.id]
                .iter()
                .map(|&i| vectors[i].own_cell)
                .collect();
            node.epsilon_contribution = node_epsilon(vectors, &member_idx[node.id]);
        }
    }

    // Global mode labels every vector up front.
    let global_labels: Option<(Vec<usize>, Vec<Vec<S>>, Vec<S>)> = match cfg.mode {
        GrowthMode::PerNode => None,
        GrowthMode::Global => {
            let budget = cfg
                .max_leaves
                .min(distinct_directions_of(
                    vectors,
                    &(0..vectors.len()).collect::<Vec<_>>(),
                )?)
                .max(2)
                .min(vectors.len());
            if budget < 2 {
                None
            } else {
                let model = cluster::fit(
                    vectors,
                    budget,
                    &FitConfig {
                        seed: derive_seed(cfg.seed, 0x676c_6f62),
                        ..cfg.fit
                    },
                )?;
                Some((model.assignment, model.centers, model.label_mass))
            }
        }
    };

    let mut n_leaves = tree.n_leaves();
    let mut order: Vec<usize> = tree.leaves();
    order.sort_by(|&a, &b| {
        tree.nodes[b]
            .epsilon_contribution
            .partial_cmp(&tree.nodes[a].epsilon_contribution)
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut new_splits = 0usize;
    for node_id in order {
        if n_leaves >= cfg.max_leaves {
            break;
        }
        if let Some(cap) = cfg.max_depth {
            if tree.nodes[node_id].depth >= cap {
                continue;
            }
        }
        let idx = member_idx[node_id].clone();
        if idx.len() < 2 {
            continue;
        }
        if let Some(delta) = cfg.purity_delta {
            if tree.nodes[node_id].epsilon_contribution <= delta {
                continue;
            }
        }
        if distinct_directions_of(vectors, &idx)? < 2 {
            continue;
        }

        // Binary labels for this node's members.
        let labels: Option<Vec<i8>> = match (&cfg.mode, &global_labels) {
            (GrowthMode::PerNode, _) => {
                let members: Vec<ActionValueVector<S>> =
                    idx.iter().map(|&i| vectors[i].clone()).collect();
                let node_fit = FitConfig {
                    seed: derive_seed(cfg.seed, 0x6e6f_6465 ^ node_id as u64),
                    ..cfg.fit
                };
                cluster::fit(&members, 2, &node_fit).ok().map(|m| {
                    m.assignment
                        .iter()
                        .map(|&l| if l == 1 { 1 } else { -1 })
                        .collect()
                })
            }
            (GrowthMode::Global, Some((assignment, centers, masses))) => {
                let mut present: Vec<usize> = idx.iter().map(|&i| assignment[i]).collect();
                present.sort_unstable();
                present.dedup();
                if present.len() < 2 {
                    None
                } else {
                    let sub_centers: Vec<Vec<S>> =
                        present.iter().map(|&l| centers[l].clone()).collect();
                    let sub_masses: Vec<S> = present.iter().map(|&l| masses[l]).collect();
                    group_classes(&sub_centers, &sub_masses, &cfg.fit)
                        .ok()
                        .map(|side| {
                            idx.iter()
                                .map(|&i| {
                                    let pos = present
                                        .iter()
                                        .position(|&l| l == assignment[i])
                                        .expect("label present");
                                    if side[pos] {
                                        1
                                    } else {
                                        -1
                                    }
                                })
                                .collect()
                        })
                }
            }
            (GrowthMode::Global, None) => None,
        };
        let labels = match labels {
            Some(l) if l.iter().any(|&x| x == 1) && l.iter().any(|&x| x == -1) => l,
            _ => continue, // degenerate clustering: node stays a leaf
        };
        let labels = match &cfg.label_noise {
            Some(noise) if noise.prob > 0.0 => {
                use rand::Rng;
                let mut rng =
                    crate::rng::stream_rng(noise.seed, 0x6e6f_6973 ^ node_id as u64);
                let flipped: Vec<i8> = labels
                    .iter()
                    .map(|&l| if rng.gen::<f64>() < noise.prob { -l } else { l })
                    .collect();
                if flipped.iter().any(|&x| x == 1) && flipped.iter().any(|&x| x == -1) {
                    flipped
                } else {
                    labels // corruption collapsed the classes; keep the originals
                }
            }
            _ => labels,
        };

        let pts: Vec<Vec<S>> = idx.iter().map(|&i| features[i].clone()).collect();
        let outcome = match train_svm(&pts, &labels, &cfg.svm) {
            Ok(o) => o,
            Err(Error::SingleClassSvm) => continue,
            Err(e) => return Err(e),
        };
        if outcome.plane.norm() <= S::of(1e-12) {
            continue; // degenerate solver output: leaf
        }
        let partition = |plane: &Hyperplane<S>| {
            let mut left_idx = Vec::new();
            let mut right_idx = Vec::new();
            for &i in &idx {
                if plane.decision(&features[i]) < S::zero() {
                    left_idx.push(i);
                } else {
                    right_idx.push(i);
                }
            }
            (left_idx, right_idx)
        };
        let mut plane = outcome.plane;
        let (mut left_idx, mut right_idx) = partition(&plane);
        if left_idx.is_empty() || right_idx.is_empty() {
            // The max-margin plane abstained (all members on one side):
            // fall back to the best label-separating axis cut.
            let wts: Vec<S> = idx.iter().map(|&i| vectors[i].weight).collect();
            let Some(fallback) = axis_fallback_split(&pts, &labels, &wts) else {
                continue; // members indistinguishable in feature space: leaf
            };
            plane = fallback;
            (left_idx, right_idx) = partition(&plane);
            if left_idx.is_empty() || right_idx.is_empty() {
                continue;
            }
        }

        let left_id = tree.nodes.len();
        let right_id = tree.nodes.len() + 1;
        let child_depth = tree.nodes[node_id].depth + 1;
        for (child_id, child_idx) in [(left_id, &left_idx), (right_id, &right_idx)] {
            tree.nodes.push(Node {
                id: child_id,
                parent: Some(node_id),
                depth: child_depth,
                split: None,
                action: 0,
                members: child_idx.iter().map(|&i| vectors[i].own_cell).collect(),
                epsilon_contribution: node_epsilon(vectors, child_idx),
            });
            member_idx.push(child_idx.clone());
        }
        tree.nodes[node_id].split = Some((plane, left_id, right_id));
        n_leaves += 1;
        new_splits += 1;
    }

    score_leaves(tree, &member_idx, vectors, scorer);
    Ok(new_splits)
}

/// Grow a decision tree over the given action-value vectors with fixed
/// weights: stage [`extend_one_level`] until the budget, depth cap, or
/// purity criterion stops progress.
///
/// The `scorer` maps a leaf's `(cell, weight)` members to per-action
/// scores. All vectors must be nonzero-norm (terminal cells are filtered
/// before clustering).
pub fn grow<S: Scalar>(
    vectors: &[ActionValueVector<S>],
    encoding: FeatureEncoding,
    agent: usize,
    scorer: &LeafScorer<'_, S>,
    cfg: &GrowConfig<S>,
) -> Result<DecisionTree<S>> {
    let mut tree = seed_tree(vectors, encoding, agent, scorer, cfg)?;
    loop {
        if let Some(cap) = cfg.max_depth {
            if tree.depth() >= cap {
                break;
            }
        }
        if extend_one_level(&mut tree, vectors, scorer, cfg)? == 0 {
            break;
        }
    }
    Ok(tree)
}

fn score_leaves<S: Scalar>(
    tree: &mut DecisionTree<S>,
    member_idx: &[Vec<usize>],
    vectors: &[ActionValueVector<S>],
    scorer: &LeafScorer<'_, S>,
) {
    for node_id in 0..tree.nodes.len() {
        if !tree.nodes[node_id].is_leaf() {
            continue;
        }
        let members: Vec<(usize, S)> = member_idx[node_id]
            .iter()
            .map(|&i| (vectors[i].own_cell, vectors[i].weight))
            .collect();
        if members.is_empty() {
            continue;
        }
        let scores = scorer(&members);
        tree.nodes[node_id].action = argmax_lowest(&scores);
    }
}

/// Route fresh vectors through a finished tree, rebuild leaf membership and
/// epsilon bookkeeping, and re-score every populated leaf's action.
///
/// This is exactly the certify-time map: the bound certification rebuilds
/// action-value vectors under the final joint policy, routes them through
/// the tree, and compares each leaf's action against the argmax of its
/// cluster center. A tree is self-consistent when this function is a no-op.
/// Returns `true` when any leaf action changed; an empty vector set leaves
/// the tree untouched.
pub fn reroute_and_rescore<S: Scalar>(
    tree: &mut DecisionTree<S>,
    vectors: &[ActionValueVector<S>],
    scorer: &LeafScorer<'_, S>,
) -> Result<bool> {
    if vectors.is_empty() {
        return Ok(false);
    }
    for v in vectors {
        if v.is_zero_norm() {
            return Err(Error::ZeroNormVector {
                observation: v.own_cell,
            });
        }
    }
    let mut member_idx: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes.len()];
    for (i, v) in vectors.iter().enumerate() {
        let f = tree.encoding.encode::<S>(tree.encoding.cell_pos(v.own_cell));
        member_idx[tree.route(&f)].push(i);
    }
    let mut changed = false;
    for node_id in 0..tree.nodes.len() {
        if !tree.nodes[node_id].is_leaf() {
            continue;
        }
        let idx = &member_idx[node_id];
        tree.nodes[node_id].members = idx.iter().map(|&i| vectors[i].own_cell).collect();
        tree.nodes[node_id].epsilon_contribution = node_epsilon(vectors, idx);
        if idx.is_empty() {
            continue; // unpopulated region: keep the action it had
        }
        let members: Vec<(usize, S)> = idx
            .iter()
            .map(|&i| (vectors[i].own_cell, vectors[i].weight))
            .collect();
        let scores = scorer(&members);
        let action = argmax_lowest(&scores);
        if action != tree.nodes[node_id].action {
            tree.nodes[node_id].action = action;
            changed = true;
        }
    }
    Ok(changed)
}

/// Re-score every leaf of a finished tree with fresh member weights.
///
/// `weight_of(cell)` supplies the new visitation mass for each member cell.
/// Returns `true` when any leaf action changed.
pub fn rescore_leaves<S: Scalar>(
    tree: &mut DecisionTree<S>,
    weight_of: &dyn Fn(usize) -> S,
    scorer: &LeafScorer<'_, S>,
) -> bool {
    let mut changed = false;
    for node_id in 0..tree.nodes.len() {
        if !tree.nodes[node_id].is_leaf() || tree.nodes[node_id].members.is_empty() {
            continue;
        }
        let members: Vec<(usize, S)> = tree.nodes[node_id]
            .members
            .iter()
            .map(|&cell| (cell, weight_of(cell)))
            .collect();
        let scores = scorer(&members);
        let action = argmax_lowest(&scores);
        if action != tree.nodes[node_id].action {
            tree.nodes[node_id].action = action;
            changed = true;
        }
    }
    changed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::MazeSpec;
    use crate::oracle::{self, VisitationMode};
    use crate::qvec::{self, Conditioning, OwnActionPin};
    use crate::rng::stream_rng;
    use rand::Rng;

    #[test]
    fn two_point_instance_recovers_the_midpoint_plane() {
        // One positive at +1, one negative at -1 (1-D): the optimum is
        // w = 1, p = 0, alpha = 0.5 for both points.
        let outcome = train_svm(
            &[vec![1.0f64], vec![-1.0]],
            &[1, -1],
            &SvmConfig {
                c: 1e6,
                ..SvmConfig::default()
            },
        )
        .unwrap();
        assert!((outcome.plane.w[0] - 1.0).abs() <= 1e-6);
        assert!(outcome.plane.p.abs() <= 1e-6);
        assert!((outcome.alphas[0] - 0.5).abs() <= 1e-6);
        assert!((outcome.alphas[1] - 0.5).abs() <= 1e-6);
        assert!(outcome.sum_alpha_y.abs() <= 1e-12);
        assert!((outcome.plane.margin - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn separable_instances_reach_unit_functional_margins() {
        let mut rng = stream_rng(7, 0);
        for _ in 0..10 {
            let w_true = [rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0];
            let b_true = rng.gen::<f64>() * 0.5 - 0.25;
            let mut points = Vec::new();
            let mut labels = Vec::new();
            while points.len() < 30 {
                let x = vec![rng.gen::<f64>(), rng.gen::<f64>()];
                let v = w_true[0] * x[0] + w_true[1] * x[1] - b_true;
                if v.abs() < 0.05 {
                    continue; // enforce a separability gap
                }
                labels.push(if v > 0.0 { 1i8 } else { -1i8 });
                points.push(x);
            }
            if labels.iter().all(|&l| l == labels[0]) {
                continue;
            }
            let outcome = train_svm(
                &points,
                &labels,
                &SvmConfig {
                    c: 1e6,
                    ..SvmConfig::default()
                },
            )
            .unwrap();
            for (x, &l) in points.iter().zip(&labels) {
                let fm = f64::from(l) * outcome.plane.decision(x);
                assert!(fm >= 1.0 - 1e-6, "functional margin {fm} below 1");
            }
            assert!(outcome.sum_alpha_y.abs() <= 1e-8);
        }
    }

    #[test]
    fn rejects_single_class_and_boundary_routes_right() {
        assert!(matches!(
            train_svm(&[vec![0.0f64], vec![1.0]], &[1, 1], &SvmConfig::default()),
            Err(Error::SingleClassSvm)
        ));
        let plane: Hyperplane<f64> = Hyperplane {
            w: vec![1.0],
            p: 0.5,
            margin: 0.0,
            trained_on: 0,
        };
        assert!(plane.decision(&[0.5]) >= 0.0); // boundary -> right
        assert!(plane.decision(&[0.49]) < 0.0);
    }

    #[test]
    fn coincident_opposite_points_leave_a_degenerate_plane() {
        let outcome = train_svm(
            &[vec![0.3f64, 0.3], vec![0.3, 0.3]],
            &[1, -1],
            &SvmConfig::default(),
        )
        .unwrap();
        assert!(outcome.plane.norm() <= 1e-9);
    }

    #[test]
    fn group_classes_matches_exhaustive_bipartition() {
        let centers: Vec<Vec<f64>> = vec![
            vec![1.0, 0.0],
            vec![0.9, 0.1],
            vec![0.0, 1.0],
            vec![-0.1, 0.9],
        ];
        let masses = vec![0.3, 0.2, 0.3, 0.2];
        let side = group_classes(&centers, &masses, &FitConfig::default()).unwrap();
        // The two x-dominant centers must separate from the two y-dominant.
        assert_eq!(side[0], side[1]);
        assert_eq!(side[2], side[3]);
        assert_ne!(side[0], side[2]);
    }

    fn simple_critic() -> (MazeSpec<f64>, oracle::OracleCritic<f64>) {
        let spec: MazeSpec<f64> = MazeSpec::simple_4x4();
        let critic = oracle::solve_exact(&spec).unwrap();
        (spec, critic)
    }

    fn greedy_visitation(
        spec: &MazeSpec<f64>,
        critic: &oracle::OracleCritic<f64>,
    ) -> oracle::VisitationDistribution<f64> {
        let dynamics = crate::env::Dynamics::build(spec).unwrap();
        oracle::visitation(
            spec,
            &dynamics,
            &oracle::GreedyPolicy::new(critic),
            VisitationMode::ExactDiscounted,
        )
        .unwrap()
    }

    #[test]
    fn grown_tree_on_simple_maze_matches_oracle_greedy() {
        let (spec, critic) = simple_critic();
        // n = 1: joint-observation indices coincide with cell indices.
        let greedy: Vec<usize> = (0..spec.n_cells()).map(|c| critic.greedy_joint(c)).collect();
        let visit = greedy_visitation(&spec, &critic);
        let vectors = qvec::build_vectors(
            &critic,
            &visit,
            0,
            &Conditioning::free(),
            OwnActionPin::OracleArgmax,
        )
        .unwrap();
        let nonzero: Vec<_> = vectors
            .into_iter()
            .filter(|v| !v.is_zero_norm())
            .collect();
        let encoding = FeatureEncoding {
            width: spec.width,
            height: spec.height,
        };
        let scorer = |members: &[(usize, f64)]| -> Vec<f64> {
            qvec::leaf_action_scores(&critic, &visit, 0, &Conditioning::free(), members).unwrap()
        };
        let tree = grow(
            &nonzero,
            encoding,
            0,
            &scorer,
            &GrowConfig::with_budget(16, 3),
        )
        .unwrap();
        assert!(tree.n_leaves() <= 16);
        // Tree actions agree with the oracle's greedy policy on every
        // nonterminal cell that the growth saw.
        for v in &nonzero {
            let pos = encoding.cell_pos(v.own_cell);
            assert_eq!(
                tree.act_cell(pos),
                greedy[v.own_cell],
                "cell {:?} disagrees",
                pos
            );
        }
    }

    #[test]
    fn leaf_budget_and_purity_stop_are_honored() {
        let (spec, critic) = simple_critic();
        let visit = greedy_visitation(&spec, &critic);
        let vectors: Vec<_> = qvec::build_vectors(
            &critic,
            &visit,
            0,
            &Conditioning::free(),
            OwnActionPin::OracleArgmax,
        )
        .unwrap()
        .into_iter()
        .filter(|v| !v.is_zero_norm())
        .collect();
        let encoding = FeatureEncoding {
            width: spec.width,
            height: spec.height,
        };
        let scorer = |members: &[(usize, f64)]| -> Vec<f64> {
            qvec::leaf_action_scores(&critic, &visit, 0, &Conditioning::free(), members).unwrap()
        };

        let budgeted = grow(
            &vectors,
            encoding,
            0,
            &scorer,
            &GrowConfig::with_budget(4, 0),
        )
        .unwrap();
        assert!(budgeted.n_leaves() <= 4);
        assert!(budgeted.n_leaves() >= 2);

        let mut pure_cfg = GrowConfig::with_budget(16, 0);
        pure_cfg.purity_delta = Some(10.0); // everything counts as pure
        let stump = grow(&vectors, encoding, 0, &scorer, &pure_cfg).unwrap();
        assert_eq!(stump.n_leaves(), 1);
        assert_eq!(stump.depth(), 0);
    }

    #[test]
    fn global_mode_grows_a_valid_tree() {
        let (spec, critic) = simple_critic();
        let visit = greedy_visitation(&spec, &critic);
        let vectors: Vec<_> = qvec::build_vectors(
            &critic,
            &visit,
            0,
            &Conditioning::free(),
            OwnActionPin::OracleArgmax,
        )
        .unwrap()
        .into_iter()
        .filter(|v| !v.is_zero_norm())
        .collect();
        let encoding = FeatureEncoding {
            width: spec.width,
            height: spec.height,
        };
        let scorer = |members: &[(usize, f64)]| -> Vec<f64> {
            qvec::leaf_action_scores(&critic, &visit, 0, &Conditioning::free(), members).unwrap()
        };
        let mut cfg = GrowConfig::with_budget(8, 1);
        cfg.mode = GrowthMode::Global;
        let tree = grow(&vectors, encoding, 0, &scorer, &cfg).unwrap();
        assert!(tree.n_leaves() <= 8);
        assert!(tree.n_leaves() >= 2);
        // Every cell routes to a leaf with a valid action.
        for v in &vectors {
            let a = tree.act_cell(encoding.cell_pos(v.own_cell));
            assert!(a < 4);
        }
    }

    #[test]
    fn dot_export_is_stable_and_readable() {
        let (spec, critic) = simple_critic();
        let visit = greedy_visitation(&spec, &critic);
        let vectors: Vec<_> = qvec::build_vectors(
            &critic,
            &visit,
            0,
            &Conditioning::free(),
            OwnActionPin::OracleArgmax,
        )
        .unwrap()
        .into_iter()
        .filter(|v| !v.is_zero_norm())
        .collect();
        let encoding = FeatureEncoding {
            width: spec.width,
            height: spec.height,
        };
        let scorer = |members: &[(usize, f64)]| -> Vec<f64> {
            qvec::leaf_action_scores(&critic, &visit, 0, &Conditioning::free(), members).unwrap()
        };
        let tree = grow(
            &vectors,
            encoding,
            0,
            &scorer,
            &GrowConfig::with_budget(4, 9),
        )
        .unwrap();
        let dot = tree.export_dot();
        assert!(dot.starts_with("digraph tree {"));
        assert!(dot.contains("*f0"));
        assert!(dot.contains("shape=oval"));
        for name in ["up", "down", "left", "right"] {
            if tree
                .nodes
                .iter()
                .any(|n| n.is_leaf() && Action::try_from(n.action).unwrap().name() == name)
            {
                assert!(dot.contains(name), "missing leaf label {name}");
            }
        }
        assert_eq!(dot, tree.export_dot());
    }

    #[test]
    fn tree_serialization_round_trips_with_version_check() {
        let (spec, critic) = simple_critic();
        let visit = greedy_visitation(&spec, &critic);
        let vectors: Vec<_> = qvec::build_vectors(
            &critic,
            &visit,
            0,
            &Conditioning::free(),
            OwnActionPin::OracleArgmax,
        )
        .unwrap()
        .into_iter()
        .filter(|v| !v.is_zero_norm())
        .collect();
        let encoding = FeatureEncoding {
            width: spec.width,
            height: spec.height,
        };
        let scorer = |members: &[(usize, f64)]| -> Vec<f64> {
            qvec::leaf_action_scores(&critic, &visit, 0, &Conditioning::free(), members).unwrap()
        };
        let tree = grow(
            &vectors,
            encoding,
            0,
            &scorer,
            &GrowConfig::with_budget(6, 2),
        )
        .unwrap();
        let text = tree.to_json().unwrap();
        let back = DecisionTree::<f64>::from_json(&text).unwrap();
        assert_eq!(tree, back);

        let mut tampered: serde_json::Value = serde_json::from_str(&text).unwrap();
        tampered["version"] = serde_json::json!(42);
        assert!(matches!(
            DecisionTree::<f64>::from_json(&tampered.to_string()),
            Err(Error::UnsupportedVersion { found: 42, .. })
        ));
    }

    #[test]
    fn rescoring_updates_leaf_actions_from_new_weights() {
        let (spec, critic) = simple_critic();
        let visit = greedy_visitation(&spec, &critic);
        let vectors: Vec<_> = qvec::build_vectors(
            &critic,
            &visit,
            0,
            &Conditioning::free(),
            OwnActionPin::OracleArgmax,
        )
        .unwrap()
        .into_iter()
        .filter(|v| !v.is_zero_norm())
        .collect();
        let encoding = FeatureEncoding {
            width: spec.width,
            height: spec.height,
        };
        let scorer = |members: &[(usize, f64)]| -> Vec<f64> {
            qvec::leaf_action_scores(&critic, &visit, 0, &Conditioning::free(), members).unwrap()
        };
        let mut tree = grow(
            &vectors,
            encoding,
            0,
            &scorer,
            &GrowConfig::with_budget(4, 5),
        )
        .unwrap();
        // Same weights: no change.
        let same = rescore_leaves(&mut tree, &|cell| visit.d_obs[cell], &scorer);
        assert!(!same);
    }
}

