//! Visitation-weighted action-value vectors: the clustering substrate.
//!
//! For a single agent the vector of observation `o` is simply the critic row
//! `[Q(o, a) for every own action a]`, unweighted. For agent `j` of a
//! multi-agent task the vector of its local observation `o_j` stacks, per
//! opponent observation `o_-j`, the entries
//! `Q(o_j, o_-j, a_j_pin, a_-j) * d(o_-j | o_j)`:
//!
//! * before any other agent has a tree, `a_-j` ranges over every joint move
//!   of the other agents (free enumeration), giving
//!   `|others_obs| * |others_actions|` components;
//! * once the other agents are represented by trees, their move at `o_-j` is
//!   determined and the vector collapses to `|others_obs|` components.
//!
//! The pinned own action `a_j_pin` comes either from the oracle (argmax of
//! the visitation-marginalized local critic) or from the agent's own tree of
//! the previous growth iteration. Components are exact products of raw `Q`
//! entries and conditional visitation mass — nothing is renormalized, so the
//! numbers are bit-reproducible from the critic and visitation tables.

use serde::{Deserialize, Serialize};

use crate::env::{self, MazeSpec, N_ACTIONS};
use crate::error::{Error, Result};
use crate::oracle::{argmax_lowest, OracleCritic, VisitationDistribution};
use crate::scalar::Scalar;

/// Where the pinned own action of a multi-agent vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ActionSource {
    /// Single-agent vectors enumerate the agent's own actions; nothing is
    /// pinned.
    OwnEnumeration,
    /// Argmax of the visitation-marginalized local critic.
    OracleArgmax,
    /// The agent's own decision tree from growth iteration `iteration`.
    TreePolicy { iteration: usize },
}

/// One observation's action-value vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionValueVector<S> {
    pub agent: usize,
    /// The agent's own cell index (see [`MazeSpec::cell_index`]).
    pub own_cell: usize,
    /// Component values; ordering documented on [`build_vectors`].
    pub components: Vec<S>,
    /// Visitation mass `d(o_j)` of this observation at build time.
    pub weight: S,
    /// Euclidean norm of `components`, cached at build time.
    pub norm: S,
    /// Pinned own action (multi-agent only).
    pub pinned_action: Option<usize>,
    pub source: ActionSource,
}

impl<S: Scalar> ActionValueVector<S> {
    /// Largest component (the best scalarized return the vector certifies).
    pub fn phi_max(&self) -> S {
        self.components
            .iter()
            .copied()
            .fold(S::neg_infinity(), S::max)
    }

    /// True when every component is zero; such vectors are storable but are
    /// rejected by cosine clustering.
    pub fn is_zero_norm(&self) -> bool {
        self.norm == S::zero()
    }
}

/// How the other agents' actions enter the components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    /// Human-readable provenance, recorded into growth schedules
    /// (e.g. `"free"`, `"trees[iter=2]"`).
    pub describes: String,
    /// `None`: free enumeration of the other agents' joint actions.
    /// `Some(table)`: `table[others_obs_index]` is the other agents' joint
    /// action index at that opponent observation.
    pub others_action: Option<Vec<usize>>,
}

impl Conditioning {
    /// Free enumeration (initial growth iteration, or single agent).
    pub fn free() -> Self {
        Conditioning {
            describes: "free".into(),
            others_action: None,
        }
    }

    /// Condition on fixed per-agent local policies: `policy(i, cell)` is
    /// agent `i`'s move at its own cell. Only agents other than `agent` are
    /// consulted.
    pub fn from_local_policies<S: Scalar>(
        spec: &MazeSpec<S>,
        agent: usize,
        describes: String,
        policy: impl Fn(usize, usize) -> usize,
    ) -> Self {
        let base = spec.n_cells();
        let others_n = env::others_count(spec);
        let other_agents: Vec<usize> = (0..spec.n_agents).filter(|&i| i != agent).collect();
        let mut table = Vec::with_capacity(others_n);
        for of in 0..others_n {
            // Decompose the others-observation index into cells (most
            // significant digit = first other agent).
            let mut rest = of;
            let mut cells = vec![0usize; other_agents.len()];
            for d in (0..other_agents.len()).rev() {
                cells[d] = rest % base;
                rest /= base;
            }
            let joint_action = other_agents
                .iter()
                .zip(&cells)
                .fold(0usize, |acc, (&i, &c)| acc * N_ACTIONS + policy(i, c));
            table.push(joint_action);
        }
        Conditioning {
            describes,
            others_action: Some(table),
        }
    }
}

/// Where the pinned own action comes from when building multi-agent vectors.
pub enum OwnActionPin<'a> {
    /// Pin to the oracle's local-marginal argmax (initial iteration).
    OracleArgmax,
    /// Pin to a per-cell action table (the agent's previous tree), tagged
    /// with the iteration that produced it.
    FromTable { actions: &'a [usize], iteration: usize },
}

/// Score each own action of `agent` against the members of a prospective
/// leaf: the component sum of the cluster center rebuilt with the own action
/// as the free dimension. `members` pairs own-cell indices with
/// (not necessarily normalized) weights.
///
/// For a single agent this reduces to the weighted average critic row, so
/// its argmax is the argmax of the cluster center.
pub fn leaf_action_scores<S: Scalar>(
    critic: &OracleCritic<S>,
    visit: &VisitationDistribution<S>,
    agent: usize,
    conditioning: &Conditioning,
    members: &[(usize, S)],
) -> Result<Vec<S>> {
    let spec = &critic.spec;
    if agent >= spec.n_agents {
        return Err(Error::InvalidArgument(format!(
            "agent {agent} out of range for {} agents",
            spec.n_agents
        )));
    }
    let mut scores = vec![S::zero(); N_ACTIONS];
    if spec.n_agents == 1 {
        for &(cell, w) in members {
            for (a, s) in scores.iter_mut().enumerate() {
                *s += w * critic.q[cell][a];
            }
        }
        return Ok(scores);
    }
    let others_n = env::others_count(spec);
    let others_a = env::others_action_count(spec);
    for &(cell, w) in members {
        let cond_row = &visit.cond[agent][cell];
        for of in 0..others_n {
            let mass = cond_row[of];
            if mass == S::zero() {
                continue;
            }
            let obs = env::merge_obs_index(spec, agent, cell, of);
            match &conditioning.others_action {
                None => {
                    for (a, s) in scores.iter_mut().enumerate() {
                        let mut acc = S::zero();
                        for oa in 0..others_a {
                            let ja = env::merge_action_index(spec, agent, a, oa);
                            acc += critic.q[obs][ja];
                        }
                        *s += w * mass * acc;
                    }
                }
                Some(table) => {
                    let oa = table[of];
                    for (a, s) in scores.iter_mut().enumerate() {
                        let ja = env::merge_action_index(spec, agent, a, oa);
                        *s += w * mass * critic.q[obs][ja];
                    }
                }
            }
        }
    }
    Ok(scores)
}

/// Build one action-value vector per reachable local observation of `agent`
/// (`d(o_j) > 0`), ordered by own-cell index.
///
/// Component ordering:
/// * single agent: component `a` is the own action `a`;
/// * free enumeration: component `o_-j * |others_actions| + a_-j`;
/// * conditioned: component `o_-j`.
pub fn build_vectors<S: Scalar>(
    critic: &OracleCritic<S>,
    visit: &VisitationDistribution<S>,
    agent: usize,
    conditioning: &Conditioning,
    pin: OwnActionPin<'_>,
) -> Result<Vec<ActionValueVector<S>>> {
    let spec = &critic.spec;
    spec.validate()?;
    if agent >= spec.n_agents {
        return Err(Error::InvalidArgument(format!(
            "agent {agent} out of range for {} agents",
            spec.n_agents
        )));
    }
    let cells = spec.n_cells();
    let mut out = Vec::new();
    for cell in 0..cells {
        let weight = visit.per_agent[agent][cell];
        if weight == S::zero() {
            continue;
        }
        let (components, pinned, source) = if spec.n_agents == 1 {
            (critic.q[cell].clone(), None, ActionSource::OwnEnumeration)
        } else {
            let (pin_action, source) = match &pin {
                OwnActionPin::OracleArgmax => {
                    let scores = leaf_action_scores(
                        critic,
                        visit,
                        agent,
                        conditioning,
                        &[(cell, S::one())],
                    )?;
                    (argmax_lowest(&scores), ActionSource::OracleArgmax)
                }
                OwnActionPin::FromTable { actions, iteration } => (
                    actions[cell],
                    ActionSource::TreePolicy {
                        iteration: *iteration,
                    },
                ),
            };
            let others_n = env::others_count(spec);
            let others_a = env::others_action_count(spec);
            let cond_row = &visit.cond[agent][cell];
            let mut components = Vec::new();
            for of in 0..others_n {
                let mass = cond_row[of];
                let obs = env::merge_obs_index(spec, agent, cell, of);
                match &conditioning.others_action {
                    None => {
                        for oa in 0..others_a {
                            let ja = env::merge_action_index(spec, agent, pin_action, oa);
                            components.push(critic.q[obs][ja] * mass);
                        }
                    }
                    Some(table) => {
                        let ja = env::merge_action_index(spec, agent, pin_action, table[of]);
                        components.push(critic.q[obs][ja] * mass);
                    }
                }
            }
            (components, Some(pin_action), source)
        };
        let norm = components.iter().map(|&c| c * c).sum::<S>().sqrt();
        out.push(ActionValueVector {
            agent,
            own_cell: cell,
            components,
            weight,
            norm,
            pinned_action: pinned,
            source,
        });
    }
    Ok(out)
}

/// Largest vector norm: the `q_max` of the return-gap bound.
pub fn q_max<S: Scalar>(vectors: &[ActionValueVector<S>]) -> Result<S> {
    if vectors.is_empty() {
        return Err(Error::InvalidArgument(
            "q_max of an empty vector set is undefined".into(),
        ));
    }
    Ok(vectors
        .iter()
        .map(|v| v.norm)
        .fold(S::neg_infinity(), S::max))
}

/// Parameters of the sampled (replay-buffer) vector builder.
#[derive(Debug, Clone, Copy)]
pub struct SampleParams {
    /// Rollout transitions kept in the buffer (most recent first).
    pub k1: usize,
    /// Most frequent opponent observations kept per own observation.
    pub k2: usize,
    pub rollouts: usize,
    pub seed: u64,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams {
            k1: 4096,
            k2: 32,
            rollouts: 512,
            seed: 0,
        }
    }
}

/// Sampled variant of [`build_vectors`] for tasks too large to enumerate:
/// estimates `d(o_-j | o_j)` from the top-`k2` most frequent opponent
/// observations in a replay buffer of the last `k1` greedy-rollout
/// transitions, then builds conditioned-style components on that truncated
/// support. Exact mode remains the default everywhere; this builder exists
/// for parity on sampled pipelines and is validated against the exact
/// builder in tests.
pub fn build_vectors_sampled<S: Scalar>(
    critic: &OracleCritic<S>,
    agent: usize,
    conditioning: &Conditioning,
    params: SampleParams,
) -> Result<Vec<ActionValueVector<S>>> {
    use rand::Rng;

    let spec = &critic.spec;
    let dyn_ = env::Dynamics::build(spec)?;
    let mu = env::initial_distribution(spec)?;
    if spec.n_agents < 2 {
        return Err(Error::InvalidArgument(
            "the sampled builder targets multi-agent vectors; use build_vectors for n=1".into(),
        ));
    }

    // Replay buffer of visited joint observations under the greedy oracle.
    let mut buffer: Vec<usize> = Vec::with_capacity(params.k1);
    'fill: for ep in 0..params.rollouts {
        let mut rng = crate::rng::stream_rng(params.seed, ep as u64);
        let mut s = {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = 0;
            for (i, m) in mu.iter().enumerate() {
                acc += m.as_f64();
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        for _ in 0..spec.horizon {
            if buffer.len() >= params.k1 {
                break 'fill;
            }
            buffer.push(s);
            if dyn_.terminal[s] {
                break;
            }
            s = dyn_.transition(s, critic.greedy_joint(s)).0;
        }
    }

    // Frequency tables per own cell.
    let cells = spec.n_cells();
    let others_n = env::others_count(spec);
    let mut own_counts = vec![0usize; cells];
    let mut pair_counts = vec![0usize; cells * others_n];
    for &s in &buffer {
        let (own, others) = env::split_obs_index(spec, s, agent);
        own_counts[own] += 1;
        pair_counts[own * others_n + others] += 1;
    }
    let total = buffer.len().max(1);

    let mut out = Vec::new();
    for cell in 0..cells {
        if own_counts[cell] == 0 {
            continue;
        }
        // Top-k2 opponent observations by count (ties toward lower index).
        let mut freq: Vec<(usize, usize)> = (0..others_n)
            .filter(|&of| pair_counts[cell * others_n + of] > 0)
            .map(|of| (of, pair_counts[cell * others_n + of]))
            .collect();
        freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        freq.truncate(params.k2);
        let kept: usize = freq.iter().map(|&(_, c)| c).sum();

        let weight = S::of(own_counts[cell] as f64 / total as f64);
        let scores = {
            // Pin the own action against the empirical conditional.
            let mut scores = vec![S::zero(); N_ACTIONS];
            for &(of, count) in &freq {
                let mass = S::of(count as f64 / kept as f64);
                let obs = env::merge_obs_index(spec, agent, cell, of);
                for (a, sc) in scores.iter_mut().enumerate() {
                    match &conditioning.others_action {
                        None => {
                            for oa in 0..env::others_action_count(spec) {
                                let ja = env::merge_action_index(spec, agent, a, oa);
                                *sc += mass * critic.q[obs][ja];
                            }
                        }
                        Some(table) => {
                            let ja = env::merge_action_index(spec, agent, a, table[of]);
                            *sc += mass * critic.q[obs][ja];
                        }
                    }
                }
            }
            scores
        };
        let pin_action = argmax_lowest(&scores);

        let mut components = Vec::new();
        for &(of, count) in &freq {
            let mass = S::of(count as f64 / kept as f64);
            let obs = env::merge_obs_index(spec, agent, cell, of);
            match &conditioning.others_action {
                None => {
                    for oa in 0..env::others_action_count(spec) {
                        let ja = env::merge_action_index(spec, agent, pin_action, oa);
                        components.push(critic.q[obs][ja] * mass);
                    }
                }
                Some(table) => {
                    let ja = env::merge_action_index(spec, agent, pin_action, table[of]);
                    components.push(critic.q[obs][ja] * mass);
                }
            }
        }
        let norm = components.iter().map(|&c| c * c).sum::<S>().sqrt();
        out.push(ActionValueVector {
            agent,
            own_cell: cell,
            components,
            weight,
            norm,
            pinned_action: Some(pin_action),
            source: ActionSource::OracleArgmax,
        });
    }
    Ok(out)
}

/// Render vectors as CSV: `f0,f1,component_0,...,component_m` — one row per
/// observation, features first (the normalized position encoding).
/// Rows are ordered by own-cell index; all vectors must share one dimension.
pub fn to_csv<S: Scalar>(spec: &MazeSpec<S>, vectors: &[ActionValueVector<S>]) -> Result<String> {
    if vectors.is_empty() {
        return Err(Error::InvalidArgument("no vectors to export".into()));
    }
    let dim = vectors[0].components.len();
    if vectors.iter().any(|v| v.components.len() != dim) {
        return Err(Error::DimensionMismatch {
            context: "csv export",
            left: dim,
            right: vectors.iter().map(|v| v.components.len()).max().unwrap(),
        });
    }
    let enc = env::FeatureEncoding::new(spec);
    let mut out = String::new();
    out.push_str("f0,f1");
    for c in 0..dim {
        out.push_str(&format!(",component_{c}"));
    }
    out.push('\n');
    for v in vectors {
        let pos = spec.cell_from_index(v.own_cell);
        let f: Vec<S> = enc.encode(pos);
        out.push_str(&format!("{},{}", f[0].as_f64(), f[1].as_f64()));
        for c in &v.components {
            out.push_str(&format!(",{}", c.as_f64()));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Render the per-observation visitation weights as CSV (`f0,f1,weight`),
/// row-aligned with [`to_csv`].
pub fn weights_to_csv<S: Scalar>(
    spec: &MazeSpec<S>,
    vectors: &[ActionValueVector<S>],
) -> Result<String> {
    if vectors.is_empty() {
        return Err(Error::InvalidArgument("no vectors to export".into()));
    }
    let enc = env::FeatureEncoding::new(spec);
    let mut out = String::from("f0,f1,weight\n");
    for v in vectors {
        let pos = spec.cell_from_index(v.own_cell);
        let f: Vec<S> = enc.encode(pos);
        out.push_str(&format!(
            "{},{},{}\n",
            f[0].as_f64(),
            f[1].as_f64(),
            v.weight.as_f64()
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::MazeSpec;
    use crate::oracle::{solve_exact, GreedyPolicy, VisitationMode};
    use proptest::prelude::*;

    fn two_agent_setup() -> (
        MazeSpec<f64>,
        OracleCritic<f64>,
        VisitationDistribution<f64>,
    ) {
        let spec = MazeSpec::<f64>::toy_2x2(2);
        let critic = solve_exact(&spec).unwrap();
        let dyn_ = env::Dynamics::build(&spec).unwrap();
        let policy = GreedyPolicy { critic: &critic };
        let visit =
            crate::oracle::visitation(&spec, &dyn_, &policy, VisitationMode::ExactDiscounted)
                .unwrap();
        (spec, critic, visit)
    }

    #[test]
    fn single_agent_vectors_are_raw_critic_rows() {
        let spec = MazeSpec::<f64>::simple_4x4();
        let critic = solve_exact(&spec).unwrap();
        let dyn_ = env::Dynamics::build(&spec).unwrap();
        let policy = GreedyPolicy { critic: &critic };
        let visit =
            crate::oracle::visitation(&spec, &dyn_, &policy, VisitationMode::ExactDiscounted)
                .unwrap();
        let vectors = build_vectors(
            &critic,
            &visit,
            0,
            &Conditioning::free(),
            OwnActionPin::OracleArgmax,
        )
        .unwrap();
        assert!(!vectors.is_empty());
        for v in &vectors {
            assert_eq!(v.components, critic.q[v.own_cell]);
            assert_eq!(v.components.len(), 4);
            assert_eq!(v.pinned_action, None);
            assert_eq!(v.source, ActionSource::OwnEnumeration);
            assert_eq!(v.weight, visit.per_agent[0][v.own_cell]);
        }
    }

    #[test]
    fn free_enumeration_components_expand_the_weighted_product() {
        let (spec, critic, visit) = two_agent_setup();
        let vectors = build_vectors(
            &critic,
            &visit,
            0,
            &Conditioning::free(),
            OwnActionPin::OracleArgmax,
        )
        .unwrap();
        // 2x2 grid: |others_obs| = 4, |others_actions| = 4 -> 16 components.
        for v in &vectors {
            assert_eq!(v.components.len(), 16);
        }
        // Every component is exactly Q(o, a) * d(o_-0 | o_0) for its slot.
        for v in &vectors {
            let pin = v.pinned_action.unwrap();
            for of in 0..4 {
                for oa in 0..4 {
                    let obs = env::merge_obs_index(&spec, 0, v.own_cell, of);
                    let ja = env::merge_action_index(&spec, 0, pin, oa);
                    let expected = critic.q[obs][ja] * visit.cond[0][v.own_cell][of];
                    let got = v.components[of * 4 + oa];
                    assert_eq!(got, expected, "component (o_-j={of}, a_-j={oa})");
                }
            }
        }
    }

    #[test]
    fn conditioning_on_other_trees_collapses_components() {
        let (spec, critic, visit) = two_agent_setup();
        // Every other agent plays `up` at every cell.
        let cond = Conditioning::from_local_policies(&spec, 0, "trees[test]".into(), |_, _| 0);
        let vectors =
            build_vectors(&critic, &visit, 0, &cond, OwnActionPin::OracleArgmax).unwrap();
        for v in &vectors {
            assert_eq!(v.components.len(), 4); // |others_obs| alone
            let pin = v.pinned_action.unwrap();
            for of in 0..4 {
                let obs = env::merge_obs_index(&spec, 0, v.own_cell, of);
                let ja = env::merge_action_index(&spec, 0, pin, 0);
                let expected = critic.q[obs][ja] * visit.cond[0][v.own_cell][of];
                assert_eq!(v.components[of], expected);
            }
        }
    }

    #[test]
    fn q_max_is_the_largest_norm() {
        let mk = |components: Vec<f64>| ActionValueVector {
            agent: 0,
            own_cell: 0,
            norm: components.iter().map(|c| c * c).sum::<f64>().sqrt(),
            components,
            weight: 1.0,
            pinned_action: None,
            source: ActionSource::OwnEnumeration,
        };
        let vectors = vec![mk(vec![3.0, 4.0]), mk(vec![6.0, 8.0])];
        assert_eq!(q_max(&vectors).unwrap(), 10.0);
        assert!(q_max::<f64>(&[]).is_err());
    }

    #[test]
    fn zero_norm_vectors_are_storable_and_flagged() {
        let v = ActionValueVector::<f64> {
            agent: 0,
            own_cell: 3,
            components: vec![0.0, 0.0, 0.0],
            weight: 0.25,
            norm: 0.0,
            pinned_action: None,
            source: ActionSource::OwnEnumeration,
        };
        assert!(v.is_zero_norm());
        let text = serde_json::to_string(&v).unwrap();
        let back: ActionValueVector<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn csv_export_has_features_then_components() {
        let spec = MazeSpec::<f64>::simple_4x4();
        let critic = solve_exact(&spec).unwrap();
        let dyn_ = env::Dynamics::build(&spec).unwrap();
        let policy = GreedyPolicy { critic: &critic };
        let visit =
            crate::oracle::visitation(&spec, &dyn_, &policy, VisitationMode::ExactDiscounted)
                .unwrap();
        let vectors = build_vectors(
            &critic,
            &visit,
            0,
            &Conditioning::free(),
            OwnActionPin::OracleArgmax,
        )
        .unwrap();
        let csv = to_csv(&spec, &vectors).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "f0,f1,component_0,component_1,component_2,component_3");
        assert_eq!(csv.lines().count(), vectors.len() + 1);
        let wcsv = weights_to_csv(&spec, &vectors).unwrap();
        assert_eq!(wcsv.lines().next().unwrap(), "f0,f1,weight");
        assert_eq!(wcsv.lines().count(), vectors.len() + 1);
    }

    #[test]
    fn sampled_builder_agrees_with_exact_on_support() {
        let (_spec, critic, _) = two_agent_setup();
        let sampled = build_vectors_sampled(
            &critic,
            0,
            &Conditioning::free(),
            SampleParams {
                k1: 4096,
                k2: 32,
                rollouts: 2048,
                seed: 3,
            },
        )
        .unwrap();
        assert!(!sampled.is_empty());
        // With k2 covering the full opponent-observation support of this tiny
        // task, component counts match the exact builder's free enumeration.
        for v in &sampled {
            assert!(v.components.len() % 4 == 0);
            assert!(v.components.len() <= 16);
            assert!(v.norm >= 0.0);
        }
    }

    proptest! {
        #[test]
        fn phi_max_never_exceeds_the_norm(
            components in proptest::collection::vec(-100.0f64..100.0, 1..24)
        ) {
            let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
            let v = ActionValueVector {
                agent: 0,
                own_cell: 0,
                components,
                weight: 1.0,
                norm,
                pinned_action: None,
                source: ActionSource::OwnEnumeration,
            };
            prop_assert!(v.phi_max() <= v.norm + 1e-12);
        }
    }
}
