//! Exact and learned tabular critics, policies over indexed observations,
//! and discounted visitation distributions.
//!
//! The critic is a dense `Q(o, a)` table over joint observations and joint
//! actions. `solve_exact` computes it by value iteration under the absorbing
//! convention of [`crate::env::Dynamics`] (terminal rows are identically
//! zero); `learn_q` runs seeded tabular Q-learning and is bit-reproducible
//! given its seed. Greedy action selection everywhere breaks ties toward the
//! lowest action index.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{self, Dynamics, MazeSpec};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::scalar::Scalar;

/// Artifact version tag for serialized critics.
pub const CRITIC_VERSION: u32 = 1;

/// Index of the first maximal entry (lowest-index tie-break).
pub fn argmax_lowest<S: PartialOrd + Copy>(xs: &[S]) -> usize {
    let mut best = 0usize;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// How a critic table was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// Value iteration to the recorded Bellman residual.
    ExactDp {
        residual: f64,
        sweeps: usize,
        finite_horizon: bool,
    },
    /// Tabular Q-learning with the recorded hyperparameters.
    QLearning {
        seed: u64,
        episodes: usize,
        alpha: f64,
        epsilon_greedy: f64,
    },
}

/// Dense action-value table for a maze, with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "S: Serialize",
    deserialize = "S: Scalar + serde::Deserialize<'de>"
))]
pub struct OracleCritic<S> {
    pub version: u32,
    pub spec: MazeSpec<S>,
    /// `q[obs][joint_action]`.
    pub q: Vec<Vec<S>>,
    pub provenance: Provenance,
}

impl<S: Scalar> OracleCritic<S> {
    /// Greedy joint action at an indexed observation.
    pub fn greedy_joint(&self, obs: usize) -> usize {
        argmax_lowest(&self.q[obs])
    }

    /// Optimal state values `V*(o) = max_a Q(o, a)`.
    pub fn v_star(&self) -> Vec<S> {
        self.q
            .iter()
            .map(|row| row.iter().copied().fold(S::neg_infinity(), S::max))
            .collect()
    }

    /// Serialize to the versioned JSON artifact format.
    pub fn to_json(&self) -> Result<String>
    where
        S: Serialize,
    {
        Ok(serde_json::to_string(self)?)
    }

    /// Load from the versioned JSON artifact format.
    pub fn from_json(text: &str) -> Result<Self>
    where
        S: for<'de> Deserialize<'de>,
    {
        let critic: OracleCritic<S> = serde_json::from_str(text)?;
        if critic.version != CRITIC_VERSION {
            return Err(Error::UnsupportedVersion {
                context: "critic",
                found: critic.version,
                expected: CRITIC_VERSION,
            });
        }
        critic.spec.validate()?;
        let n_actions = critic.spec.n_joint_actions();
        if critic.q.len() != critic.spec.n_joint_obs()
            || critic.q.iter().any(|row| row.len() != n_actions)
        {
            return Err(Error::InvalidArgument(
                "critic table shape does not match its maze".into(),
            ));
        }
        Ok(critic)
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

/// Configuration for [`solve_exact_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactSolveConfig {
    /// Sup-norm change threshold between sweeps.
    pub tol: f64,
    /// Hard cap on sweeps (the threshold normally triggers much earlier).
    pub max_sweeps: usize,
    /// When true, unroll exactly `horizon` backward-induction stages instead
    /// of iterating the discounted fixed point.
    pub finite_horizon: bool,
}

impl Default for ExactSolveConfig {
    fn default() -> Self {
        ExactSolveConfig {
            tol: 1e-10,
            max_sweeps: 100_000,
            finite_horizon: false,
        }
    }
}

/// Value iteration on the tabulated dynamics (default configuration).
pub fn solve_exact<S: Scalar>(spec: &MazeSpec<S>) -> Result<OracleCritic<S>> {
    solve_exact_with(spec, ExactSolveConfig::default())
}

/// Value iteration on the tabulated dynamics.
///
/// Returns a table whose Bellman residual is below `cfg.tol` (the final
/// sweep's sup-norm change bounds it). The finite-horizon variant performs
/// exactly `spec.horizon` discounted backup stages from the zero table.
pub fn solve_exact_with<S: Scalar>(
    spec: &MazeSpec<S>,
    cfg: ExactSolveConfig,
) -> Result<OracleCritic<S>> {
    let dyn_ = Dynamics::build(spec)?;
    let n_obs = dyn_.n_obs;
    let n_actions = dyn_.n_actions;
    let gamma = spec.discount;
    let tol = S::of(cfg.tol);

    let mut q = vec![vec![S::zero(); n_actions]; n_obs];
    let mut v = vec![S::zero(); n_obs];
    let sweeps_cap = if cfg.finite_horizon {
        spec.horizon as usize
    } else {
        cfg.max_sweeps
    };
    let mut residual = S::zero();
    let mut sweeps = 0usize;
    for sweep in 0..sweeps_cap {
        residual = S::zero();
        for i in 0..n_obs {
            if dyn_.terminal[i] {
                continue;
            }
            let mut best = S::neg_infinity();
            for a in 0..n_actions {
                let (nxt, r) = dyn_.transition(i, a);
                let value = r + gamma * v[nxt];
                let delta = (value - q[i][a]).abs();
                if delta > residual {
                    residual = delta;
                }
                q[i][a] = value;
                if value > best {
                    best = value;
                }
            }
            v[i] = best;
        }
        sweeps = sweep + 1;
        if !cfg.finite_horizon && residual <= tol {
            break;
        }
    }

    Ok(OracleCritic {
        version: CRITIC_VERSION,
        spec: spec.clone(),
        q,
        provenance: Provenance::ExactDp {
            residual: residual.as_f64(),
            sweeps,
            finite_horizon: cfg.finite_horizon,
        },
    })
}

/// Hyperparameters for [`learn_q`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QLearnConfig {
    pub episodes: usize,
    pub alpha: f64,
    pub epsilon_greedy: f64,
    pub seed: u64,
}

impl Default for QLearnConfig {
    fn default() -> Self {
        QLearnConfig {
            episodes: 3000,
            alpha: 0.2,
            epsilon_greedy: 0.2,
            seed: 0,
        }
    }
}

/// Tabular Q-learning over `cfg.episodes` episodes of length `spec.horizon`.
///
/// Start states are drawn from the uniform free-cell initial distribution.
/// The run is a deterministic function of `cfg.seed`; zero episodes return
/// the all-zero table.
pub fn learn_q<S: Scalar>(spec: &MazeSpec<S>, cfg: QLearnConfig) -> Result<OracleCritic<S>> {
    let dyn_ = Dynamics::build(spec)?;
    let mu = env::initial_distribution(spec)?;
    let alpha = S::of(cfg.alpha);
    let gamma = spec.discount;
    let mut q = vec![vec![S::zero(); dyn_.n_actions]; dyn_.n_obs];

    let mut rng = stream_rng(cfg.seed, 0x51_4C_45_41_52_4E); // stream tag: q-learn
    for _ in 0..cfg.episodes {
        let mut s = sample_from(&mu, rng.gen::<f64>());
        for _ in 0..spec.horizon {
            if dyn_.terminal[s] {
                break;
            }
            let a = if rng.gen::<f64>() < cfg.epsilon_greedy {
                rng.gen_range(0..dyn_.n_actions)
            } else {
                argmax_lowest(&q[s])
            };
            let (nxt, r) = dyn_.transition(s, a);
            let bootstrap = if dyn_.terminal[nxt] {
                S::zero()
            } else {
                q[nxt].iter().copied().fold(S::neg_infinity(), S::max)
            };
            let target = r + gamma * bootstrap;
            q[s][a] = q[s][a] + alpha * (target - q[s][a]);
            s = nxt;
        }
    }

    Ok(OracleCritic {
        version: CRITIC_VERSION,
        spec: spec.clone(),
        q,
        provenance: Provenance::QLearning {
            seed: cfg.seed,
            episodes: cfg.episodes,
            alpha: cfg.alpha,
            epsilon_greedy: cfg.epsilon_greedy,
        },
    })
}

/// Sample an index from a probability vector given a uniform draw in [0, 1).
pub(crate) fn sample_from<S: Scalar>(mass: &[S], u: f64) -> usize {
    let mut acc = 0.0f64;
    let mut last_support = 0usize;
    for (i, m) in mass.iter().enumerate() {
        let w = m.as_f64();
        if w > 0.0 {
            acc += w;
            last_support = i;
            if u < acc {
                return i;
            }
        }
    }
    last_support
}

/// Deterministic policy over indexed joint observations.
pub trait IndexedPolicy: Sync {
    fn joint_action(&self, obs: usize) -> usize;
}

/// Centralized greedy policy of a critic.
pub struct GreedyPolicy<'a, S> {
    pub critic: &'a OracleCritic<S>,
}

impl<'a, S> GreedyPolicy<'a, S> {
    pub fn new(critic: &'a OracleCritic<S>) -> Self {
        GreedyPolicy { critic }
    }
}

impl<S: Scalar> IndexedPolicy for GreedyPolicy<'_, S> {
    fn joint_action(&self, obs: usize) -> usize {
        self.critic.greedy_joint(obs)
    }
}

/// How a visitation distribution is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum VisitationMode {
    /// `(1 - gamma) * sum_t gamma^t P(o_t = o)` accumulated to a residual
    /// below ~1e-12 (absorbing tail folded in closed form).
    ExactDiscounted,
    /// Same series truncated at the maze horizon and renormalized.
    ExactFiniteHorizon,
    /// Monte-Carlo estimate from seeded rollouts with per-visit weights
    /// `gamma^t` and closed-form terminal tails.
    Empirical { rollouts: usize, seed: u64 },
}

/// Discounted visitation of a policy: the joint distribution plus per-agent
/// marginals and conditionals used when building action-value vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitationDistribution<S> {
    /// `d(o)` over joint-observation indices; sums to 1.
    pub d_obs: Vec<S>,
    /// `d(o_j)` per agent over its own cells; each sums to 1.
    pub per_agent: Vec<Vec<S>>,
    /// Per agent `j`: `cond[j][own_cell][others_index] = d(o_-j | o_j)`.
    /// Rows with zero marginal mass are defined uniform. Each row sums to 1.
    pub cond: Vec<Vec<Vec<S>>>,
    pub mode: VisitationMode,
}

impl<S: Scalar> VisitationDistribution<S> {
    /// Mass per cluster label under an assignment of (a subset of) joint
    /// observations to labels. `assignment` maps joint-observation index ->
    /// label; unassigned observations contribute nothing, so the result is a
    /// subprobability vector when terminal mass exists.
    pub fn label_masses(&self, assignment: &[(usize, usize)], n_labels: usize) -> Vec<S> {
        let mut mass = vec![S::zero(); n_labels];
        for &(obs, label) in assignment {
            mass[label] += self.d_obs[obs];
        }
        mass
    }
}

fn finish_distribution<S: Scalar>(
    spec: &MazeSpec<S>,
    mut d_obs: Vec<S>,
    mode: VisitationMode,
) -> VisitationDistribution<S> {
    // Guard against tiny negative drifts and renormalize exactly.
    let mut total = S::zero();
    for m in &mut d_obs {
        if *m < S::zero() {
            *m = S::zero();
        }
        total += *m;
    }
    for m in &mut d_obs {
        *m /= total;
    }

    let n = spec.n_agents;
    let cells = spec.n_cells();
    let others_n = env::others_count(spec);
    let mut per_agent = vec![vec![S::zero(); cells]; n];
    let mut joint_split = vec![vec![S::zero(); cells * others_n]; n];
    for (idx, &m) in d_obs.iter().enumerate() {
        if m == S::zero() {
            continue;
        }
        for j in 0..n {
            let (own, others) = env::split_obs_index(spec, idx, j);
            per_agent[j][own] += m;
            joint_split[j][own * others_n + others] += m;
        }
    }
    let uniform_row = S::one() / S::of(others_n as f64);
    let cond = (0..n)
        .map(|j| {
            (0..cells)
                .map(|c| {
                    let mass = per_agent[j][c];
                    if mass > S::zero() {
                        (0..others_n)
                            .map(|o| joint_split[j][c * others_n + o] / mass)
                            .collect()
                    } else {
                        vec![uniform_row; others_n]
                    }
                })
                .collect()
        })
        .collect();

    VisitationDistribution {
        d_obs,
        per_agent,
        cond,
        mode,
    }
}

/// Number of steps after which the remaining discounted tail mass drops
/// below ~1e-12.
fn discount_cutoff<S: Scalar>(gamma: S) -> usize {
    let g = gamma.as_f64();
    ((-12.0f64 * std::f64::consts::LN_10) / g.ln()).ceil() as usize
}

/// Compute the discounted visitation distribution of `policy` from the
/// uniform free-cell initial distribution.
pub fn visitation<S: Scalar>(
    spec: &MazeSpec<S>,
    dyn_: &Dynamics<S>,
    policy: &dyn IndexedPolicy,
    mode: VisitationMode,
) -> Result<VisitationDistribution<S>> {
    let mu = env::initial_distribution(spec)?;
    let gamma = spec.discount;
    match mode {
        VisitationMode::ExactDiscounted | VisitationMode::ExactFiniteHorizon => {
            let finite = matches!(mode, VisitationMode::ExactFiniteHorizon);
            let steps = if finite {
                spec.horizon as usize
            } else {
                discount_cutoff(gamma)
            };
            let mut p = mu;
            let mut d = vec![S::zero(); dyn_.n_obs];
            let one_minus = S::one() - gamma;
            let mut scale = one_minus;
            for _ in 0..steps {
                for (i, &m) in p.iter().enumerate() {
                    d[i] += scale * m;
                }
                let mut next = vec![S::zero(); dyn_.n_obs];
                for (i, &m) in p.iter().enumerate() {
                    if m == S::zero() {
                        continue;
                    }
                    let to = if dyn_.terminal[i] {
                        i
                    } else {
                        dyn_.transition(i, policy.joint_action(i)).0
                    };
                    next[to] += m;
                }
                p = next;
                scale *= gamma;
            }
            if finite {
                // Final stage, then the series is renormalized by its own sum.
                for (i, &m) in p.iter().enumerate() {
                    d[i] += scale * m;
                }
            } else {
                // Remaining tail mass gamma^steps spread as the current state
                // distribution; total-variation error <= gamma^steps.
                let tail = scale / one_minus;
                for (i, &m) in p.iter().enumerate() {
                    d[i] += tail * m;
                }
            }
            Ok(finish_distribution(spec, d, mode))
        }
        VisitationMode::Empirical { rollouts, seed } => {
            let cutoff = discount_cutoff(gamma);
            let per_episode: Vec<Vec<(u32, S)>> = (0..rollouts)
                .into_par_iter()
                .map(|ep| {
                    let mut rng = stream_rng(seed, ep as u64);
                    let mut s = sample_from(&mu, rng.gen::<f64>());
                    let mut visits: Vec<(u32, S)> = Vec::with_capacity(16);
                    let mut w = S::one();
                    let one_minus = S::one() - gamma;
                    for _ in 0..cutoff {
                        visits.push((s as u32, one_minus * w));
                        if dyn_.terminal[s] {
                            break;
                        }
                        s = dyn_.transition(s, policy.joint_action(s)).0;
                        w *= gamma;
                    }
                    // Closed-form tail at the final (absorbing or cut-off)
                    // state: sum_{t>t_last} (1-gamma) gamma^t = gamma^(t_last+1).
                    visits.push((s as u32, w * gamma));
                    visits
                })
                .collect();
            let mut d = vec![S::zero(); dyn_.n_obs];
            for visits in per_episode {
                for (s, w) in visits {
                    d[s as usize] += w;
                }
            }
            Ok(finish_distribution(spec, d, mode))
        }
    }
}

/// Exact discounted return `J(pi) = (1 - gamma) * E_mu[V^pi]`, computed by
/// iterative policy evaluation. Also returns the full value vector.
pub fn policy_value_discounted<S: Scalar>(
    spec: &MazeSpec<S>,
    dyn_: &Dynamics<S>,
    policy: &dyn IndexedPolicy,
) -> Result<(S, Vec<S>)> {
    let mu = env::initial_distribution(spec)?;
    let gamma = spec.discount;
    let tol = S::of(1e-13);
    let mut v = vec![S::zero(); dyn_.n_obs];
    let actions: Vec<usize> = (0..dyn_.n_obs).map(|i| policy.joint_action(i)).collect();
    for _ in 0..200_000 {
        let mut residual = S::zero();
        for i in 0..dyn_.n_obs {
            if dyn_.terminal[i] {
                continue;
            }
            let (nxt, r) = dyn_.transition(i, actions[i]);
            let value = r + gamma * v[nxt];
            let delta = (value - v[i]).abs();
            if delta > residual {
                residual = delta;
            }
            v[i] = value;
        }
        if residual <= tol {
            break;
        }
    }
    let j = mu
        .iter()
        .zip(&v)
        .map(|(&m, &val)| m * val)
        .sum::<S>()
        * (S::one() - gamma);
    Ok((j, v))
}

/// Mean undiscounted episode reward under `policy`, averaging the
/// deterministic `horizon`-step rollout over every initial observation,
/// weighted by the initial distribution. Exact for deterministic dynamics.
pub fn episodic_return_exact<S: Scalar>(
    spec: &MazeSpec<S>,
    dyn_: &Dynamics<S>,
    policy: &dyn IndexedPolicy,
) -> Result<S> {
    let mu = env::initial_distribution(spec)?;
    let mut total = S::zero();
    for (start, &m) in mu.iter().enumerate() {
        if m == S::zero() {
            continue;
        }
        total += m * rollout_return(spec, dyn_, policy, start);
    }
    Ok(total)
}

/// Mean undiscounted episode reward over `episodes` seeded rollouts.
pub fn episodic_return_sampled<S: Scalar>(
    spec: &MazeSpec<S>,
    dyn_: &Dynamics<S>,
    policy: &dyn IndexedPolicy,
    episodes: usize,
    seed: u64,
) -> Result<S> {
    if episodes == 0 {
        return Err(Error::InvalidArgument(
            "empirical evaluation requires at least one rollout".into(),
        ));
    }
    let mu = env::initial_distribution(spec)?;
    let returns: Vec<S> = (0..episodes)
        .into_par_iter()
        .map(|ep| {
            let mut rng = stream_rng(seed, ep as u64);
            let start = sample_from(&mu, rng.gen::<f64>());
            rollout_return(spec, dyn_, policy, start)
        })
        .collect();
    Ok(returns.into_iter().sum::<S>() / S::of(episodes as f64))
}

fn rollout_return<S: Scalar>(
    spec: &MazeSpec<S>,
    dyn_: &Dynamics<S>,
    policy: &dyn IndexedPolicy,
    start: usize,
) -> S {
    let mut s = start;
    let mut total = S::zero();
    for _ in 0..spec.horizon {
        if dyn_.terminal[s] {
            break;
        }
        let (nxt, r) = dyn_.transition(s, policy.joint_action(s));
        total += r;
        s = nxt;
    }
    total
}

/// Total-variation distance between two distributions on the same index set.
pub fn total_variation<S: Scalar>(a: &[S], b: &[S]) -> S {
    let half = S::of(0.5);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs())
        .sum::<S>()
        * half
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{JointObservation, MazeSpec};

    /// Two-cell chain: start at (0,0); `up` reaches the reward-1 target at
    /// (1,0), every other move stays in place.
    fn chain() -> MazeSpec<f64> {
        MazeSpec {
            width: 2,
            height: 1,
            targets: vec![crate::env::Target {
                pos: (1, 0),
                reward: 1.0,
            }],
            obstacles: vec![],
            obstacle_penalty: -5.0,
            horizon: 10,
            n_agents: 1,
            discount: 0.9,
            group_reward_rule: false,
            group_bonus: 5.0,
            agent_collision_penalty: 0.0,
            state_cap: 100_000,
        }
    }

    /// Independent brute-force value iteration over the chain, written
    /// directly against `step` rather than the tabulated dynamics.
    fn chain_brute_force_q() -> Vec<f64> {
        let spec = chain();
        let start = JointObservation {
            positions: vec![(0, 0)],
        };
        let mut q = vec![0.0f64; 4];
        let mut v0 = 0.0f64;
        for _ in 0..600 {
            for (a, slot) in q.iter_mut().enumerate() {
                let (next, r, done) = env::step(
                    &spec,
                    &start,
                    &crate::env::JointAction { indices: vec![a] },
                )
                .unwrap();
                assert_eq!(done, next.positions[0] == (1, 0));
                let bootstrap = if done { 0.0 } else { v0 };
                *slot = r + spec.discount * bootstrap;
            }
            v0 = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        q
    }

    #[test]
    fn chain_critic_matches_hand_solution() {
        let spec = chain();
        let critic = solve_exact(&spec).unwrap();
        let start = env::obs_index(
            &spec,
            &JointObservation {
                positions: vec![(0, 0)],
            },
        );
        // Hand computation: advancing pays 1 and terminates; staying pays
        // gamma * V(start) with V(start) = 1.
        assert!((critic.q[start][0] - 1.0).abs() <= 1e-9); // up
        assert!((critic.q[start][1] - 0.9).abs() <= 1e-9); // down (stays)
        assert!((critic.q[start][2] - 0.9).abs() <= 1e-9); // left (stays)
        assert!((critic.q[start][3] - 0.9).abs() <= 1e-9); // right (stays)

        let brute = chain_brute_force_q();
        for a in 0..4 {
            assert!((critic.q[start][a] - brute[a]).abs() <= 1e-9);
        }
        assert_eq!(critic.greedy_joint(start), 0);
    }

    #[test]
    fn chain_visitation_matches_hand_solution() {
        let spec = chain();
        let dyn_ = Dynamics::build(&spec).unwrap();
        let critic = solve_exact(&spec).unwrap();
        let policy = GreedyPolicy { critic: &critic };
        let visit = visitation(&spec, &dyn_, &policy, VisitationMode::ExactDiscounted).unwrap();
        let start = env::obs_index(
            &spec,
            &JointObservation {
                positions: vec![(0, 0)],
            },
        );
        let target = env::obs_index(
            &spec,
            &JointObservation {
                positions: vec![(1, 0)],
            },
        );
        // d(start) = (1 - gamma) * 1, d(target) = gamma (absorbed forever).
        assert!((visit.d_obs[start] - 0.1).abs() <= 1e-9);
        assert!((visit.d_obs[target] - 0.9).abs() <= 1e-9);
        let total: f64 = visit.d_obs.iter().sum();
        assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn q_learning_is_bit_deterministic_and_zero_episode_safe() {
        let spec = MazeSpec::<f64>::simple_4x4();
        let cfg = QLearnConfig {
            episodes: 500,
            seed: 42,
            ..QLearnConfig::default()
        };
        let a = learn_q(&spec, cfg).unwrap();
        let b = learn_q(&spec, cfg).unwrap();
        assert_eq!(a.q, b.q);

        let zero = learn_q(
            &spec,
            QLearnConfig {
                episodes: 0,
                ..cfg
            },
        )
        .unwrap();
        assert!(zero.q.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_critic_dominates_learned_critic_on_rollouts() {
        let spec = MazeSpec::<f64>::simple_4x4();
        let dyn_ = Dynamics::build(&spec).unwrap();
        let exact = solve_exact(&spec).unwrap();
        let learned = learn_q(
            &spec,
            QLearnConfig {
                episodes: 3000,
                seed: 7,
                ..QLearnConfig::default()
            },
        )
        .unwrap();
        let j_exact =
            episodic_return_exact(&spec, &dyn_, &GreedyPolicy { critic: &exact }).unwrap();
        let j_learned =
            episodic_return_exact(&spec, &dyn_, &GreedyPolicy { critic: &learned }).unwrap();
        assert!(j_exact >= j_learned - 1e-12);
        assert!(j_exact > 0.0);
    }

    #[test]
    fn empirical_visitation_approaches_exact() {
        let spec = MazeSpec::<f64>::simple_4x4();
        let dyn_ = Dynamics::build(&spec).unwrap();
        let critic = solve_exact(&spec).unwrap();
        let policy = GreedyPolicy { critic: &critic };
        let exact = visitation(&spec, &dyn_, &policy, VisitationMode::ExactDiscounted).unwrap();
        let emp = visitation(
            &spec,
            &dyn_,
            &policy,
            VisitationMode::Empirical {
                rollouts: 100_000,
                seed: 11,
            },
        )
        .unwrap();
        let tv = total_variation(&exact.d_obs, &emp.d_obs);
        assert!(tv <= 0.02, "total variation {tv} exceeds 0.02");
    }

    #[test]
    fn conditionals_are_rows_of_probabilities() {
        let spec = MazeSpec::<f64>::predator_prey_4x4(2);
        let dyn_ = Dynamics::build(&spec).unwrap();
        let critic = solve_exact(&spec).unwrap();
        let policy = GreedyPolicy { critic: &critic };
        let visit = visitation(&spec, &dyn_, &policy, VisitationMode::ExactDiscounted).unwrap();
        for j in 0..2 {
            let marg: f64 = visit.per_agent[j].iter().sum();
            assert!((marg - 1.0).abs() <= 1e-9);
            for row in &visit.cond[j] {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() <= 1e-9);
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn finite_horizon_critic_is_bounded_by_discounted_critic() {
        let spec = MazeSpec::<f64>::simple_4x4();
        let inf = solve_exact(&spec).unwrap();
        let fin = solve_exact_with(
            &spec,
            ExactSolveConfig {
                finite_horizon: true,
                ..ExactSolveConfig::default()
            },
        )
        .unwrap();
        for (ri, rf) in inf.q.iter().zip(&fin.q) {
            for (qi, qf) in ri.iter().zip(rf) {
                assert!(*qf <= *qi + 1e-9);
            }
        }
        match fin.provenance {
            Provenance::ExactDp {
                finite_horizon, sweeps, ..
            } => {
                assert!(finite_horizon);
                assert_eq!(sweeps, spec.horizon as usize);
            }
            _ => panic!("wrong provenance"),
        }
    }

    #[test]
    fn critic_serialization_round_trips_with_version_check() {
        let spec = chain();
        let critic = solve_exact(&spec).unwrap();
        let text = critic.to_json().unwrap();
        let back = OracleCritic::<f64>::from_json(&text).unwrap();
        assert_eq!(critic, back);

        let mut tampered: serde_json::Value = serde_json::from_str(&text).unwrap();
        tampered["version"] = serde_json::json!(99);
        let err = OracleCritic::<f64>::from_json(&tampered.to_string()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found: 99, .. }));
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_lowest(&[5.0]), 0);
        assert_eq!(argmax_lowest(&[2.0, 2.0, 2.0]), 0);
    }
}
