//! Tabular grid-world environments (single- and multi-agent).
//!
//! A maze is a `width x height` grid. Positions are `(x, y)` with
//! `x in [0, width)` and `y in [0, height)`; `up`/`down` move along the first
//! coordinate (+x / -x) and `left`/`right` along the second (-y / +y). Moves
//! that would leave the grid clamp to the wall, so every action is legal in
//! every cell.
//!
//! Rewards are arrival-based: after all agents move simultaneously, each
//! agent standing on a target cell contributes that target's reward, each
//! agent standing on an obstacle contributes the obstacle penalty, and (when
//! the group rule is on) a group bonus is paid once all agents occupy targets
//! at the same step. A single-agent episode terminates when the agent reaches
//! any target; a multi-agent episode terminates when every agent is on a
//! target simultaneously. There is no movement cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of moves in the (fixed) move set.
pub const N_ACTIONS: usize = 4;

/// One agent's move. The discriminant order `[up, down, left, right]` is the
/// canonical action indexing used everywhere (tables, trees, exports).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    /// All actions in canonical index order.
    pub const ALL: [Action; N_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right];

    /// Displacement on `(x, y)`.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Action::Up => (1, 0),
            Action::Down => (-1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }

    /// Lower-case name used in DOT exports and CLI output.
    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
        }
    }
}

impl TryFrom<usize> for Action {
    type Error = Error;

    fn try_from(index: usize) -> Result<Action> {
        Action::ALL.get(index).copied().ok_or(Error::InvalidAction {
            agent: 0,
            index,
            n_actions: N_ACTIONS,
        })
    }
}

/// A rewarded landmark cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target<S> {
    /// Grid position `(x, y)`.
    pub pos: (u32, u32),
    /// Reward paid per step an agent stands here.
    pub reward: S,
}

fn default_n_agents() -> usize {
    1
}

fn default_state_cap() -> usize {
    100_000
}

fn default_obstacle_penalty<S: Scalar>() -> S {
    S::of(-5.0)
}

fn default_discount<S: Scalar>() -> S {
    S::of(0.99)
}

fn default_group_bonus<S: Scalar>() -> S {
    S::of(5.0)
}

fn default_zero<S: Scalar>() -> S {
    S::zero()
}

/// Full description of a maze task. Serializes to/from the JSON schema used
/// by the CLI (`--maze maze.json`); all fields except `width`, `height`,
/// `targets` and `horizon` have defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "S: Serialize",
    deserialize = "S: Scalar + Deserialize<'de>"
))]
pub struct MazeSpec<S> {
    /// Grid extent along the first position coordinate.
    pub width: u32,
    /// Grid extent along the second position coordinate.
    pub height: u32,
    /// Landmark cells with per-step rewards. At least one is required.
    pub targets: Vec<Target<S>>,
    /// Obstacle cells; standing on one costs `obstacle_penalty` per step.
    #[serde(default)]
    pub obstacles: Vec<(u32, u32)>,
    /// Per-step penalty for standing on an obstacle (conventionally negative).
    #[serde(default = "default_obstacle_penalty")]
    pub obstacle_penalty: S,
    /// Episode length used by rollout-based evaluation.
    pub horizon: u32,
    /// Number of agents sharing the grid.
    #[serde(default = "default_n_agents")]
    pub n_agents: usize,
    /// Discount factor for the exact critic and occupancy computations.
    #[serde(default = "default_discount")]
    pub discount: S,
    /// When true (multi-agent), pay `group_bonus` on simultaneous target
    /// coverage by all agents.
    #[serde(default)]
    pub group_reward_rule: bool,
    /// Bonus paid when the group rule fires.
    #[serde(default = "default_group_bonus")]
    pub group_bonus: S,
    /// Penalty added per unordered pair of agents sharing a cell (0 = off).
    #[serde(default = "default_zero")]
    pub agent_collision_penalty: S,
    /// Upper bound on the exhaustive joint-observation enumeration.
    #[serde(default = "default_state_cap")]
    pub state_cap: usize,
}

impl<S: Scalar> MazeSpec<S> {
    /// 4x4 single-agent maze: one high-reward landmark at (1, 1), no
    /// obstacles, short horizon.
    pub fn simple_4x4() -> Self {
        MazeSpec {
            width: 4,
            height: 4,
            targets: vec![Target {
                pos: (1, 1),
                reward: S::of(10.0),
            }],
            obstacles: vec![],
            obstacle_penalty: default_obstacle_penalty(),
            horizon: 3,
            n_agents: 1,
            discount: default_discount(),
            group_reward_rule: false,
            group_bonus: default_group_bonus(),
            agent_collision_penalty: S::zero(),
            state_cap: default_state_cap(),
        }
    }

    /// 8x8 single-agent maze: one landmark, two obstacles, medium horizon.
    pub fn medium_8x8() -> Self {
        MazeSpec {
            width: 8,
            height: 8,
            targets: vec![Target {
                pos: (1, 1),
                reward: S::of(10.0),
            }],
            obstacles: vec![(3, 3), (4, 4)],
            horizon: 8,
            ..Self::simple_4x4()
        }
    }

    /// 10x10 single-agent maze: a high-reward landmark at (1, 1) guarded by
    /// two obstacles on its approach, plus a lower-reward landmark at the
    /// grid center.
    pub fn hard_10x10() -> Self {
        MazeSpec {
            width: 10,
            height: 10,
            targets: vec![
                Target {
                    pos: (1, 1),
                    reward: S::of(10.0),
                },
                Target {
                    pos: (5, 5),
                    reward: S::of(5.0),
                },
            ],
            obstacles: vec![(2, 1), (1, 2)],
            horizon: 10,
            ..Self::simple_4x4()
        }
    }

    /// 4x4 cooperative task: `n_agents` share the grid, two landmarks of
    /// unequal value, and the group rule pays a bonus for simultaneous
    /// coverage.
    pub fn predator_prey_4x4(n_agents: usize) -> Self {
        MazeSpec {
            width: 4,
            height: 4,
            targets: vec![
                Target {
                    pos: (1, 1),
                    reward: S::of(10.0),
                },
                Target {
                    pos: (2, 2),
                    reward: S::of(5.0),
                },
            ],
            obstacles: vec![],
            horizon: 8,
            n_agents,
            group_reward_rule: true,
            ..Self::simple_4x4()
        }
    }

    /// 2x2 cooperative toy where the whole upper row is rewarded: optimal
    /// play is `up` everywhere for every agent, independent of coordinates.
    pub fn toy_2x2(n_agents: usize) -> Self {
        MazeSpec {
            width: 2,
            height: 2,
            targets: vec![
                Target {
                    pos: (1, 0),
                    reward: S::of(10.0),
                },
                Target {
                    pos: (1, 1),
                    reward: S::of(10.0),
                },
            ],
            obstacles: vec![],
            horizon: 3,
            n_agents,
            group_reward_rule: true,
            ..Self::simple_4x4()
        }
    }

    /// Validate the description. Called by every consumer that builds tables
    /// from the spec; the CLI maps these errors to its validation exit code.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidMaze(format!(
                "grid must be non-empty, got {}x{}",
                self.width, self.height
            )));
        }
        if self.n_agents == 0 {
            return Err(Error::InvalidMaze("n_agents must be at least 1".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::InvalidMaze("at least one target is required".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidMaze("horizon must be at least 1".into()));
        }
        let inside = |&(x, y): &(u32, u32)| x < self.width && y < self.height;
        for t in &self.targets {
            if !inside(&t.pos) {
                return Err(Error::InvalidMaze(format!(
                    "target at ({}, {}) lies outside the {}x{} grid",
                    t.pos.0, t.pos.1, self.width, self.height
                )));
            }
        }
        for o in &self.obstacles {
            if !inside(o) {
                return Err(Error::InvalidMaze(format!(
                    "obstacle at ({}, {}) lies outside the {}x{} grid",
                    o.0, o.1, self.width, self.height
                )));
            }
            if self.targets.iter().any(|t| t.pos == *o) {
                return Err(Error::InvalidMaze(format!(
                    "cell ({}, {}) is both a target and an obstacle",
                    o.0, o.1
                )));
            }
        }
        let g = self.discount;
        if !(g > S::zero() && g < S::one()) {
            return Err(Error::InvalidMaze(format!(
                "discount must lie in (0, 1), got {}",
                g
            )));
        }
        if self.targets.iter().any(|t| !t.reward.is_finite()) {
            return Err(Error::InvalidMaze("target rewards must be finite".into()));
        }
        Ok(())
    }

    /// Number of cells one agent can occupy.
    pub fn n_cells(&self) -> usize {
        (self.width as usize) * (self.height as usize)
    }

    /// Number of joint observations (`n_cells ^ n_agents`), before the cap
    /// check.
    pub fn n_joint_obs(&self) -> usize {
        self.n_cells().pow(self.n_agents as u32)
    }

    /// Number of joint actions (`4 ^ n_agents`).
    pub fn n_joint_actions(&self) -> usize {
        N_ACTIONS.pow(self.n_agents as u32)
    }

    /// Canonical index of one agent's cell: `x * height + y`.
    pub fn cell_index(&self, pos: (u32, u32)) -> usize {
        (pos.0 as usize) * (self.height as usize) + pos.1 as usize
    }

    /// Inverse of [`MazeSpec::cell_index`].
    pub fn cell_from_index(&self, index: usize) -> (u32, u32) {
        let h = self.height as usize;
        ((index / h) as u32, (index % h) as u32)
    }

    /// True if the cell is a target.
    pub fn is_target(&self, pos: (u32, u32)) -> bool {
        self.targets.iter().any(|t| t.pos == pos)
    }

    /// Reward of the target at `pos`, if any.
    pub fn target_reward(&self, pos: (u32, u32)) -> Option<S> {
        self.targets.iter().find(|t| t.pos == pos).map(|t| t.reward)
    }

    /// True if the cell is an obstacle.
    pub fn is_obstacle(&self, pos: (u32, u32)) -> bool {
        self.obstacles.contains(&pos)
    }

    /// Read a spec from its JSON form and validate it.
    pub fn from_json(text: &str) -> Result<Self>
    where
        S: for<'de> Deserialize<'de>,
    {
        let spec: MazeSpec<S> = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Joint observation: every agent's `(x, y)` position. Agents are ordered;
/// agent `j` observes only `positions[j]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointObservation {
    pub positions: Vec<(u32, u32)>,
}

/// Joint action: one move index per agent, in agent order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointAction {
    pub indices: Vec<usize>,
}

/// Fixed, invertible map between one agent's position and the real feature
/// vector fed to hyperplanes: `[x / (width-1), y / (height-1)]`, each
/// coordinate normalized into `[0, 1]` (degenerate extents divide by 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEncoding {
    pub width: u32,
    pub height: u32,
}

impl FeatureEncoding {
    /// Number of features per observation.
    pub const DIM: usize = 2;

    pub fn new<S: Scalar>(spec: &MazeSpec<S>) -> Self {
        FeatureEncoding {
            width: spec.width,
            height: spec.height,
        }
    }

    fn span(extent: u32) -> u32 {
        extent.saturating_sub(1).max(1)
    }

    /// Grid position of a flat cell index (`cell = x * height + y`).
    pub fn cell_pos(&self, cell: usize) -> (u32, u32) {
        (
            (cell / self.height as usize) as u32,
            (cell % self.height as usize) as u32,
        )
    }

    /// Encode a position into `[0, 1]^2`.
    pub fn encode<S: Scalar>(&self, pos: (u32, u32)) -> Vec<S> {
        vec![
            S::of(pos.0 as f64 / Self::span(self.width) as f64),
            S::of(pos.1 as f64 / Self::span(self.height) as f64),
        ]
    }

    /// Decode features back to the nearest grid position (exact on encoded
    /// points, which makes the map a documented bijection on the grid).
    pub fn decode<S: Scalar>(&self, features: &[S]) -> Result<(u32, u32)> {
        if features.len() != Self::DIM {
            return Err(Error::DimensionMismatch {
                context: "feature decode",
                left: features.len(),
                right: Self::DIM,
            });
        }
        let x = (features[0].as_f64() * Self::span(self.width) as f64).round();
        let y = (features[1].as_f64() * Self::span(self.height) as f64).round();
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return Err(Error::InvalidArgument(format!(
                "features ({}, {}) decode outside the {}x{} grid",
                features[0], features[1], self.width, self.height
            )));
        }
        Ok((x as u32, y as u32))
    }
}

/// One simultaneous step of the simulator.
///
/// Returns the next joint observation, the team reward collected on arrival,
/// and whether the episode terminated (single agent: on any target; multiple
/// agents: all on targets at once).
pub fn step<S: Scalar>(
    spec: &MazeSpec<S>,
    obs: &JointObservation,
    action: &JointAction,
) -> Result<(JointObservation, S, bool)> {
    if obs.positions.len() != spec.n_agents {
        return Err(Error::DimensionMismatch {
            context: "observation arity",
            left: obs.positions.len(),
            right: spec.n_agents,
        });
    }
    if action.indices.len() != spec.n_agents {
        return Err(Error::DimensionMismatch {
            context: "action arity",
            left: action.indices.len(),
            right: spec.n_agents,
        });
    }
    let mut next = Vec::with_capacity(spec.n_agents);
    for (agent, (&(x, y), &a_idx)) in obs.positions.iter().zip(&action.indices).enumerate() {
        if a_idx >= N_ACTIONS {
            return Err(Error::InvalidAction {
                agent,
                index: a_idx,
                n_actions: N_ACTIONS,
            });
        }
        let (dx, dy) = Action::ALL[a_idx].delta();
        let nx = (x as i64 + dx).clamp(0, spec.width as i64 - 1) as u32;
        let ny = (y as i64 + dy).clamp(0, spec.height as i64 - 1) as u32;
        next.push((nx, ny));
    }
    let next = JointObservation { positions: next };
    let reward = arrival_reward(spec, &next);
    let done = is_terminal(spec, &next);
    Ok((next, reward, done))
}

/// Team reward for occupying `obs` (arrival-based; see the module docs).
pub fn arrival_reward<S: Scalar>(spec: &MazeSpec<S>, obs: &JointObservation) -> S {
    let mut reward = S::zero();
    for &pos in &obs.positions {
        if let Some(r) = spec.target_reward(pos) {
            reward += r;
        } else if spec.is_obstacle(pos) {
            reward += spec.obstacle_penalty;
        }
    }
    if spec.n_agents > 1 {
        if spec.group_reward_rule && obs.positions.iter().all(|&p| spec.is_target(p)) {
            reward += spec.group_bonus;
        }
        for i in 0..spec.n_agents {
            for j in (i + 1)..spec.n_agents {
                if obs.positions[i] == obs.positions[j] {
                    reward += spec.agent_collision_penalty;
                }
            }
        }
    }
    reward
}

/// Episode-termination predicate on a joint observation.
pub fn is_terminal<S: Scalar>(spec: &MazeSpec<S>, obs: &JointObservation) -> bool {
    if spec.n_agents == 1 {
        spec.is_target(obs.positions[0])
    } else {
        obs.positions.iter().all(|&p| spec.is_target(p))
    }
}

/// Canonical joint-observation index: agent order, most significant first,
/// each digit the agent's [`MazeSpec::cell_index`] in base `n_cells`.
pub fn obs_index<S: Scalar>(spec: &MazeSpec<S>, obs: &JointObservation) -> usize {
    let base = spec.n_cells();
    obs.positions
        .iter()
        .fold(0usize, |acc, &p| acc * base + spec.cell_index(p))
}

/// Inverse of [`obs_index`].
pub fn obs_from_index<S: Scalar>(spec: &MazeSpec<S>, mut index: usize) -> JointObservation {
    let base = spec.n_cells();
    let mut rev = Vec::with_capacity(spec.n_agents);
    for _ in 0..spec.n_agents {
        rev.push(spec.cell_from_index(index % base));
        index /= base;
    }
    rev.reverse();
    JointObservation { positions: rev }
}

/// Canonical joint-action index (agent order, most significant first, base 4).
pub fn action_index<S: Scalar>(spec: &MazeSpec<S>, action: &JointAction) -> usize {
    debug_assert_eq!(action.indices.len(), spec.n_agents);
    action
        .indices
        .iter()
        .fold(0usize, |acc, &a| acc * N_ACTIONS + a)
}

/// Inverse of [`action_index`].
pub fn action_from_index<S: Scalar>(spec: &MazeSpec<S>, mut index: usize) -> JointAction {
    let mut rev = Vec::with_capacity(spec.n_agents);
    for _ in 0..spec.n_agents {
        rev.push(index % N_ACTIONS);
        index /= N_ACTIONS;
    }
    rev.reverse();
    JointAction { indices: rev }
}

/// Number of joint observations of all agents except one
/// (`n_cells ^ (n_agents - 1)`).
pub fn others_count<S: Scalar>(spec: &MazeSpec<S>) -> usize {
    spec.n_cells().pow(spec.n_agents as u32 - 1)
}

/// Split a joint-observation index into agent `j`'s own cell index and the
/// index of the remaining agents' joint observation (agent order preserved,
/// `j` removed).
pub fn split_obs_index<S: Scalar>(spec: &MazeSpec<S>, index: usize, agent: usize) -> (usize, usize) {
    let base = spec.n_cells();
    let n = spec.n_agents;
    let mut digits = vec![0usize; n];
    let mut rest = index;
    for d in (0..n).rev() {
        digits[d] = rest % base;
        rest /= base;
    }
    let own = digits[agent];
    let others = digits
        .iter()
        .enumerate()
        .filter(|&(d, _)| d != agent)
        .fold(0usize, |acc, (_, &c)| acc * base + c);
    (own, others)
}

/// Split a joint-action index into agent `j`'s own action and the remaining
/// agents' joint action index (agent order preserved, `j` removed).
pub fn split_action_index<S: Scalar>(
    spec: &MazeSpec<S>,
    index: usize,
    agent: usize,
) -> (usize, usize) {
    let n = spec.n_agents;
    let mut digits = vec![0usize; n];
    let mut rest = index;
    for d in (0..n).rev() {
        digits[d] = rest % N_ACTIONS;
        rest /= N_ACTIONS;
    }
    let own = digits[agent];
    let others = digits
        .iter()
        .enumerate()
        .filter(|&(d, _)| d != agent)
        .fold(0usize, |acc, (_, &a)| acc * N_ACTIONS + a);
    (own, others)
}

/// Inverse of [`split_action_index`].
pub fn merge_action_index<S: Scalar>(
    spec: &MazeSpec<S>,
    agent: usize,
    own_action: usize,
    others_index: usize,
) -> usize {
    let n = spec.n_agents;
    let mut others = vec![0usize; n - 1];
    let mut rest = others_index;
    for d in (0..n - 1).rev() {
        others[d] = rest % N_ACTIONS;
        rest /= N_ACTIONS;
    }
    let mut digits = Vec::with_capacity(n);
    let mut o_iter = others.into_iter();
    for d in 0..n {
        if d == agent {
            digits.push(own_action);
        } else {
            digits.push(o_iter.next().expect("others digits exhausted"));
        }
    }
    digits.into_iter().fold(0usize, |acc, a| acc * N_ACTIONS + a)
}

/// Number of joint actions of all agents except one (`4 ^ (n_agents - 1)`).
pub fn others_action_count<S: Scalar>(spec: &MazeSpec<S>) -> usize {
    N_ACTIONS.pow(spec.n_agents as u32 - 1)
}

/// Inverse of [`split_obs_index`].
pub fn merge_obs_index<S: Scalar>(
    spec: &MazeSpec<S>,
    agent: usize,
    own_cell: usize,
    others_index: usize,
) -> usize {
    let base = spec.n_cells();
    let n = spec.n_agents;
    let mut others = vec![0usize; n - 1];
    let mut rest = others_index;
    for d in (0..n - 1).rev() {
        others[d] = rest % base;
        rest /= base;
    }
    let mut digits = Vec::with_capacity(n);
    let mut o_iter = others.into_iter();
    for d in 0..n {
        if d == agent {
            digits.push(own_cell);
        } else {
            digits.push(o_iter.next().expect("others digits exhausted"));
        }
    }
    digits.into_iter().fold(0usize, |acc, c| acc * base + c)
}

/// Exhaustively enumerate all joint observations in index order, refusing to
/// materialize more than `spec.state_cap` of them.
pub fn enumerate_states<S: Scalar>(spec: &MazeSpec<S>) -> Result<Vec<JointObservation>> {
    spec.validate()?;
    let n = spec.n_joint_obs();
    if n > spec.state_cap {
        return Err(Error::StateCapExceeded {
            requested: n,
            cap: spec.state_cap,
        });
    }
    Ok((0..n).map(|i| obs_from_index(spec, i)).collect())
}

/// Uniform initial distribution over joint observations in which no agent
/// starts on a target or an obstacle. Indexed like [`obs_index`].
pub fn initial_distribution<S: Scalar>(spec: &MazeSpec<S>) -> Result<Vec<S>> {
    let n = spec.n_joint_obs();
    if n > spec.state_cap {
        return Err(Error::StateCapExceeded {
            requested: n,
            cap: spec.state_cap,
        });
    }
    let mut mass = vec![S::zero(); n];
    let mut support = 0usize;
    for i in 0..n {
        let obs = obs_from_index(spec, i);
        let free = obs
            .positions
            .iter()
            .all(|&p| !spec.is_target(p) && !spec.is_obstacle(p));
        if free {
            mass[i] = S::one();
            support += 1;
        }
    }
    if support == 0 {
        return Err(Error::InvalidMaze(
            "no valid start cells: every cell is a target or an obstacle".into(),
        ));
    }
    let w = S::one() / S::of(support as f64);
    for m in &mut mass {
        if *m > S::zero() {
            *m = w;
        }
    }
    Ok(mass)
}

/// Precomputed deterministic dynamics over indexed joint observations.
///
/// Terminal observations are absorbing with zero reward, which is the
/// convention the exact critic, occupancy computations, and gap
/// certification all share.
#[derive(Debug, Clone)]
pub struct Dynamics<S> {
    /// `next[obs * n_joint_actions + action]` -> next observation index.
    pub next: Vec<u32>,
    /// Arrival reward for the same indexing.
    pub reward: Vec<S>,
    /// `terminal[obs]` -> absorbing flag.
    pub terminal: Vec<bool>,
    pub n_obs: usize,
    pub n_actions: usize,
}

impl<S: Scalar> Dynamics<S> {
    /// Tabulate the dynamics of `spec` (respecting its state cap).
    pub fn build(spec: &MazeSpec<S>) -> Result<Self> {
        spec.validate()?;
        let n_obs = spec.n_joint_obs();
        if n_obs > spec.state_cap {
            return Err(Error::StateCapExceeded {
                requested: n_obs,
                cap: spec.state_cap,
            });
        }
        let n_actions = spec.n_joint_actions();
        let mut next = vec![0u32; n_obs * n_actions];
        let mut reward = vec![S::zero(); n_obs * n_actions];
        let mut terminal = vec![false; n_obs];
        for i in 0..n_obs {
            let obs = obs_from_index(spec, i);
            terminal[i] = is_terminal(spec, &obs);
            for a in 0..n_actions {
                let slot = i * n_actions + a;
                if terminal[i] {
                    next[slot] = i as u32;
                    continue;
                }
                let action = action_from_index(spec, a);
                let (nobs, r, _done) = step(spec, &obs, &action)?;
                next[slot] = obs_index(spec, &nobs) as u32;
                reward[slot] = r;
            }
        }
        Ok(Dynamics {
            next,
            reward,
            terminal,
            n_obs,
            n_actions,
        })
    }

    /// Transition lookup.
    #[inline]
    pub fn transition(&self, obs: usize, action: usize) -> (usize, S) {
        let slot = obs * self.n_actions + action;
        (self.next[slot] as usize, self.reward[slot])
    }
}
