//! Temporary diagnostic for the criterion-3 bound violation instance.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rgmdt::cluster;
use rgmdt::env::{Dynamics, MazeSpec, Target};
use rgmdt::evalx;
use rgmdt::multiagent::{self, JointGrowConfig, TreeJointPolicy};
use rgmdt::oracle::{self, GreedyPolicy, VisitationMode};
use rgmdt::qvec::{self, Conditioning, OwnActionPin};
use rgmdt::svmtree::GrowConfig;

fn random_single_agent_maze(rng: &mut ChaCha8Rng) -> MazeSpec<f64> {
    loop {
        let width = rng.gen_range(2..=6u32);
        let height = rng.gen_range(2..=6u32);
        let cells: Vec<(u32, u32)> = (0..width)
            .flat_map(|x| (0..height).map(move |y| (x, y)))
            .collect();
        let target = cells[rng.gen_range(0..cells.len())];
        let obstacles: Vec<(u32, u32)> = cells
            .iter()
            .filter(|&&c| c != target && rng.gen_bool(0.15))
            .copied()
            .collect();
        let spec = MazeSpec::<f64> {
            width,
            height,
            targets: vec![Target {
                pos: target,
                reward: rng.gen_range(0.5..2.0),
            }],
            obstacles,
            obstacle_penalty: -1.0,
            horizon: width + height + 2,
            n_agents: 1,
            discount: *[0.9, 0.95, 0.99].choose(rng).unwrap(),
            group_reward_rule: false,
            group_bonus: 0.0,
            agent_collision_penalty: 0.0,
            state_cap: 100_000,
        };
        if spec.validate().is_ok() {
            return spec;
        }
    }
}

#[test]
fn dissect_violating_instance() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0u64);
    let budgets = [2usize, 3, 4, 6, 8];
    let mut spec = None;
    let mut leaves = 0usize;
    for i in 0..12 {
        let s = random_single_agent_maze(&mut rng);
        let l = budgets[rng.gen_range(0..budgets.len())];
        if i == 5 {
            spec = Some(s);
            leaves = l;
        }
    }
    let spec = spec.unwrap();
    println!(
        "instance: {}x{} target {:?} r {:.4} obstacles {:?} gamma {} L {leaves}",
        spec.width,
        spec.height,
        spec.targets[0].pos,
        spec.targets[0].reward,
        spec.obstacles,
        spec.discount
    );

    let critic = oracle::solve_exact(&spec).unwrap();
    let cfg = JointGrowConfig::new(GrowConfig::with_budget(leaves, 5));
    let grown = multiagent::grow_joint(&critic, &cfg).unwrap();
    let report = evalx::certify_bound(&critic, &grown.trees, Some(&grown.schedule)).unwrap();
    println!(
        "gap {:.6e} bound {:.6e} eps {:.6e} q_max {:.4} certified {}",
        report.gap, report.bound_explicit, report.epsilon, report.q_max, report.certified
    );

    // Reconstruct the certify-time clusters: tree partition, weights under
    // the final tree policy.
    let tree = &grown.trees[0];
    let dynamics = Dynamics::build(&spec).unwrap();
    let policy = TreeJointPolicy::new(&spec, &grown.trees).unwrap();
    let visit = oracle::visitation(&spec, &dynamics, &policy, VisitationMode::ExactDiscounted).unwrap();
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

    let leaf_ids = tree.leaves();
    println!("leaf ids {leaf_ids:?}");
    let assignment: Vec<usize> = vectors
        .iter()
        .map(|v| {
            let leaf = tree.route_cell(tree.encoding.cell_pos(v.own_cell));
            leaf_ids.iter().position(|&l| l == leaf).unwrap()
        })
        .collect();
    let breakdown = cluster::epsilon_of(&vectors, &assignment, leaf_ids.len()).unwrap();
    println!("recomputed eps {:.6e} per-label {:?}", breakdown.epsilon, breakdown.per_label);

    // Leaf action vs center argmax.
    for (k, &leaf) in leaf_ids.iter().enumerate() {
        let center = &breakdown.centers[k];
        let center_argmax = center
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        println!(
            "leaf {leaf}: tree action {} center argmax {center_argmax} center {center:?} mass {:.4}",
            tree.nodes[leaf].action, breakdown.label_mass[k]
        );
    }

    // Per-observation PDL terms: d^T(o) * (V*(o) - Q*(o, T(o))).
    let v_star = critic.v_star();
    let mut pdl = 0.0;
    for v in &vectors {
        let cell = v.own_cell;
        let a_tree = tree.act_cell(tree.encoding.cell_pos(cell));
        let q_row: Vec<f64> = (0..4).map(|a| critic.q[cell][a]).collect();
        let advantage = v_star[cell] - q_row[a_tree];
        let d = v.weight;
        let label = assignment[vectors.iter().position(|x| x.own_cell == cell).unwrap()];
        let dist = cluster::cosine_distance(&v.components, &breakdown.centers[label]).unwrap();
        pdl += d * advantage;
        if advantage > 1e-12 {
            println!(
                "cell {cell}: d {d:.4} V* {:.4} Q(tree) {:.4} adv {advantage:.4} eps(o) {dist:.6} \
                 norm {:.4} sqrt(2eps)*norm {:.4}",
                v_star[cell],
                q_row[a_tree],
                v.norm,
                (2.0 * dist).sqrt() * v.norm
            );
        }
    }
    println!("pdl-sum(gap over nonzero vectors) {pdl:.6e} vs report gap {:.6e}", report.gap);
    let greedy = GreedyPolicy::new(&critic);
    let (j_opt, _) = oracle::policy_value_discounted(&spec, &dynamics, &greedy).unwrap();
    let (j_tree, _) = oracle::policy_value_discounted(&spec, &dynamics, &policy).unwrap();
    println!("j_opt {j_opt:.6} j_tree {j_tree:.6}");

    // Enumerate every leaf-action assignment: which are best-response fixed
    // points, and do those certify?
    let mut grown = grown;
    println!("--- exhaustive assignment scan (L=2, 4 actions) ---");
    for a0 in 0..4usize {
        for a1 in 0..4usize {
            let tree = &mut grown.trees[0];
            let ids = tree.leaves();
            tree.nodes[ids[0]].action = a0;
            tree.nodes[ids[1]].action = a1;
            let policy = TreeJointPolicy::new(&spec, &grown.trees).unwrap();
            let visit =
                oracle::visitation(&spec, &dynamics, &policy, VisitationMode::ExactDiscounted)
                    .unwrap();
            let tree = &grown.trees[0];
            let mut br = [0usize; 2];
            for (k, &leaf) in tree.leaves().iter().enumerate() {
                let members: Vec<(usize, f64)> = tree.nodes[leaf]
                    .members
                    .iter()
                    .map(|&cell| (cell, visit.per_agent[0][cell]))
                    .collect();
                let scores =
                    qvec::leaf_action_scores(&critic, &visit, 0, &Conditioning::free(), &members)
                        .unwrap();
                br[k] = scores
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
            }
            let consistent = br == [a0, a1];
            let report =
                evalx::certify_bound(&critic, &grown.trees, Some(&grown.schedule)).unwrap();
            println!(
                "actions ({a0},{a1}) br ({},{}) consistent {:<5} gap {:.4e} bound {:.4e} certified {}",
                br[0], br[1], consistent, report.gap, report.bound_explicit, report.certified
            );
        }
    }
}
