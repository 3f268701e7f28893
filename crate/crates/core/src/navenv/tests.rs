use std::sync::Arc;

use super::*;
use crate::gridmap::{
    generate_map, BeliefMap, Cell, CellPos, GridGeometry, MapSpec, MapStyle, OccupancyGrid, Pose,
};
use crate::rng::seeded;
use rand::Rng;

fn arena(cells: usize) -> Arc<OccupancyGrid> {
    Arc::new(OccupancyGrid::empty_room(cells, cells, 0.1))
}

fn small_cfg() -> NavEnvCfg {
    NavEnvCfg {
        context_h: 64,
        context_w: 64,
        ..NavEnvCfg::default()
    }
}

fn center(map: &OccupancyGrid, x: usize, y: usize) -> Pose {
    map.geometry().center_of(CellPos::new(x, y))
}

/// Segment-versus-open-cell test, independent of the ray walker.
fn segment_hits_cell(p0: (f64, f64), p1: (f64, f64), cx: usize, cy: usize) -> bool {
    let d = 1e-6;
    let (lo_x, hi_x) = (cx as f64 + d, cx as f64 + 1.0 - d);
    let (lo_y, hi_y) = (cy as f64 + d, cy as f64 + 1.0 - d);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q, lo, hi) in [(p0.0, p1.0 - p0.0, lo_x, hi_x), (p0.1, p1.1 - p0.1, lo_y, hi_y)] {
        if q == 0.0 {
            if p <= lo || p >= hi {
                return false;
            }
        } else {
            let (a, b) = ((lo - p) / q, (hi - p) / q);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    t0 < t1
}

fn los_oracle(b: &BeliefMap, from: CellPos, to: CellPos) -> bool {
    let p0 = (from.x as f64 + 0.5, from.y as f64 + 0.5);
    let p1 = (to.x as f64 + 0.5, to.y as f64 + 0.5);
    for y in from.y.min(to.y)..=from.y.max(to.y) {
        for x in from.x.min(to.x)..=from.x.max(to.x) {
            if segment_hits_cell(p0, p1, x, y) && !b.is_free(CellPos::new(x, y)) {
                return false;
            }
        }
    }
    true
}

#[test]
fn reward_closed_forms() {
    let r = RewardCfg::default();
    assert_eq!(r.reward(true, 0.5, 0.0), 20.0);
    assert_eq!(r.reward(false, 2.0, 2.0), -1.0);
    assert!((r.reward(false, 1.0, 1.3) - -1.6).abs() < 1e-12);
}

#[test]
fn reset_observes_and_is_reproducible() {
    let map = arena(40);
    let (s, g) = (center(&map, 5, 5), center(&map, 30, 30));
    let a = NavEnv::reset(small_cfg(), map.clone(), s, g, 9).unwrap();
    assert!(a.belief().known_count() > 0);
    assert_eq!(a.steps(), 0);
    assert_eq!(a.outcome(), Outcome::Running);
    let b = NavEnv::reset(small_cfg(), map.clone(), s, g, 9).unwrap();
    assert_eq!(a.observation(), b.observation());
    assert_eq!(a.observation().context.height(), 64);
    assert!(matches!(
        NavEnv::reset(small_cfg(), map.clone(), s, center(&map, 0, 3), 9),
        Err(NavError::Setup(_))
    ));
}

#[test]
fn unreachable_goal_is_a_setup_error() {
    let map = Arc::new(
        OccupancyGrid::from_ascii(&["#######", "#..#..#", "#..#..#", "#######"], 0.1).unwrap(),
    );
    let r = NavEnv::reset(small_cfg(), map.clone(), center(&map, 1, 1), center(&map, 5, 2), 0);
    assert!(matches!(r, Err(NavError::Setup(_))));
}

#[test]
fn open_arena_gives_full_candidate_set() {
    let map = arena(102);
    let belief = BeliefMap::fully_known(&map);
    let pose = center(&map, 51, 51);
    let s = sample_waypoints(&belief, pose, CellPos::new(5, 5), 20, 3.0, 0.3, &mut seeded(1)).unwrap();
    assert_eq!(s.cells.len(), 20);
    assert!(!s.fallback && !s.goal_included);
    let g = map.geometry();
    for (i, a) in s.cells.iter().enumerate() {
        assert!(g.center_of(*a).dist(pose) <= 3.0);
        assert_ne!(*a, CellPos::new(51, 51));
        for b in &s.cells[i + 1..] {
            assert!(g.center_of(*a).dist(g.center_of(*b)) >= 0.3 - 1e-12);
        }
    }
}

#[test]
fn visible_goal_is_forced_first() {
    let map = arena(60);
    let belief = BeliefMap::fully_known(&map);
    let pose = center(&map, 20, 20);
    let goal = CellPos::new(35, 20);
    for seed in 0..20 {
        let s = sample_waypoints(&belief, pose, goal, 20, 3.0, 0.3, &mut seeded(seed)).unwrap();
        assert!(s.goal_included);
        assert_eq!(s.cells[0], goal);
        assert_eq!(s.cells.iter().filter(|c| **c == goal).count(), 1);
    }
    // beyond r_local the goal is not forced
    let s = sample_waypoints(&belief, pose, CellPos::new(55, 20), 20, 3.0, 0.3, &mut seeded(0)).unwrap();
    assert!(!s.goal_included);
}

#[test]
fn pocket_triggers_fallback_then_stuck() {
    let map = OccupancyGrid::from_ascii(&["#####", "#####", "##.##", "#####", "#####"], 0.1).unwrap();
    let belief = BeliefMap::fully_known(&map);
    let s = sample_waypoints(&belief, center(&map, 2, 2), CellPos::new(2, 2), 20, 3.0, 0.3, &mut seeded(0))
        .unwrap();
    assert!(s.fallback);
    assert!(s.cells.is_empty());
    // r_local below one cell leaves only the neighbor fallback
    let open = arena(10);
    let b = BeliefMap::fully_known(&open);
    let s = sample_waypoints(&b, center(&open, 4, 4), CellPos::new(8, 8), 20, 0.05, 0.3, &mut seeded(0)).unwrap();
    assert!(s.fallback);
    assert_eq!(s.cells.len(), 8);
}

#[test]
fn candidates_stay_within_reach() {
    let map = generate_map(&MapSpec::new(64, MapStyle::Rooms, 0.1, 4)).unwrap();
    let mut rng = seeded(5);
    let mut belief = BeliefMap::unknown_like(&map);
    let free: Vec<CellPos> = map.free_cells().collect();
    for _ in 0..5 {
        let c = free[rng.random_range(0..free.len())];
        let p = map.geometry().center_of(c);
        crate::gridmap::fuse_scan(&mut belief, &crate::gridmap::raycast_scan(&map, p, Default::default()));
    }
    let agent = free[rng.random_range(0..free.len())];
    if !belief.is_free(agent) {
        return;
    }
    let pose = map.geometry().center_of(agent);
    let s = sample_waypoints(&belief, pose, CellPos::new(1, 1), 20, 3.0, 0.3, &mut rng).unwrap();
    for c in &s.cells {
        assert!(belief.is_free(*c));
        assert!(s.field.is_reachable(*c));
        assert!(map.geometry().center_of(*c).dist(pose) <= 3.0);
    }
}

#[test]
fn knn_small_cases() {
    let p = |x: f64| Pose::new(x, 0.0);
    assert_eq!(build_graph(&[p(0.0), p(1.0), p(5.0)], 10), vec![(0, 1), (0, 2), (1, 2)]);
    // node 2 is equidistant from 1 and 3 and must pick 1
    let line = [p(0.0), p(1.0), p(2.0), p(3.0)];
    assert_eq!(build_graph(&line, 1), vec![(0, 1), (1, 2), (2, 3)]);
    assert_eq!(build_graph(&[p(0.0)], 10), vec![]);
}

#[test]
fn knn_matches_rank_oracle() {
    let mut rng = seeded(11);
    for _ in 0..20 {
        let nodes: Vec<Pose> = (0..20)
            .map(|_| Pose::new(rng.random_range(0..8) as f64 * 0.5, rng.random_range(0..8) as f64 * 0.5))
            .collect();
        let k = 10;
        let mut expect = std::collections::BTreeSet::new();
        for i in 0..20 {
            for j in 0..20 {
                if i == j {
                    continue;
                }
                let dij = nodes[i].dist(nodes[j]);
                let rank = (0..20)
                    .filter(|&o| o != i && o != j)
                    .filter(|&o| {
                        let d = nodes[i].dist(nodes[o]);
                        d < dij || (d == dij && o < j)
                    })
                    .count();
                if rank < k {
                    expect.insert((i.min(j), i.max(j)));
                }
            }
        }
        assert_eq!(build_graph(&nodes, k), expect.into_iter().collect::<Vec<_>>());
    }
}

#[test]
fn node_feature_conventions() {
    let map = arena(30);
    let full = BeliefMap::fully_known(&map);
    let visited = vec![false; 900];
    let agent = center(&map, 10, 10);
    let goal = CellPos::new(12, 10);
    let n = node_features(goal, agent, goal, &full, &[], &visited, Default::default(), 3.0);
    assert_eq!(n.dir_goal, [0.0, 0.0]);
    let frontiers = crate::gridmap::detect_frontiers(&full);
    assert!(frontiers.is_empty());
    let m = node_features(CellPos::new(12, 13), agent, goal, &full, &frontiers, &visited, Default::default(), 3.0);
    assert_eq!(m.utility, 0);
    assert!((m.dir_goal[0].hypot(m.dir_goal[1]) - 1.0).abs() < 1e-12);
    assert!((m.dir_goal[1] + 1.0).abs() < 1e-12);
    assert!((m.rel_pos[0] - 0.2 / 3.0).abs() < 1e-9);
    assert!((m.rel_pos[1] - 0.3 / 3.0).abs() < 1e-9);
    let mut v = visited.clone();
    v[map.geometry().index(CellPos::new(12, 13))] = true;
    let m = node_features(CellPos::new(12, 13), agent, goal, &full, &frontiers, &v, Default::default(), 3.0);
    assert!(m.visited);
}

#[test]
fn corridor_frontiers_visible_from_node() {
    // known free corridor along y = 2; one frontier at its end
    let geom = GridGeometry {
        width: 12,
        height: 5,
        resolution: 0.1,
        origin: (0.0, 0.0),
    };
    let mut cells = vec![Cell::Occupied; 60];
    for x in 1..11 {
        cells[2 * 12 + x] = Cell::Free;
    }
    cells[2 * 12 + 10] = Cell::Free;
    cells[12 + 10] = Cell::Unknown;
    let b = BeliefMap::from_cells(geom, cells).unwrap();
    let fr = crate::gridmap::detect_frontiers(&b);
    assert_eq!(fr.len(), 2, "{fr:?}");
    let node = CellPos::new(2, 2);
    let f = node_features(node, geom.center_of(node), CellPos::new(1, 2), &b, &fr, &[false; 60], Default::default(), 3.0);
    let oracle = fr.iter().filter(|c| los_oracle(&b, node, **c)).count() as u32;
    assert_eq!(f.utility, oracle);
    assert_eq!(f.utility, 2);
}

#[test]
fn line_of_sight_matches_segment_oracle() {
    let mut rng = seeded(21);
    for trial in 0..40 {
        let map = generate_map(&MapSpec::new(32, MapStyle::Cluttered, 0.15, trial)).unwrap();
        let mut cells = map.cells().to_vec();
        for c in cells.iter_mut() {
            if rng.random_bool(0.1) {
                *c = Cell::Unknown;
            }
        }
        let b = BeliefMap::from_cells(*map.geometry(), cells).unwrap();
        let free: Vec<CellPos> = (0..b.cells().len()).map(|i| b.geometry().pos(i)).filter(|c| b.is_free(*c)).collect();
        for _ in 0..200 {
            let a = free[rng.random_range(0..free.len())];
            let c = free[rng.random_range(0..free.len())];
            assert_eq!(line_of_sight(&b, a, c), los_oracle(&b, a, c), "{a} -> {c}");
        }
        let fr = crate::gridmap::detect_frontiers(&b);
        let node = free[0];
        let f = node_features(node, b.geometry().center_of(node), node, &b, &fr, &vec![false; b.cells().len()], Default::default(), 3.0);
        let oracle = fr.iter().filter(|c| c.dist(node) <= 50.0 && los_oracle(&b, node, **c)).count() as u32;
        assert_eq!(f.utility, oracle);
    }
}

#[test]
fn step_rejects_bad_actions() {
    let map = arena(40);
    let mut env = NavEnv::reset(small_cfg(), map.clone(), center(&map, 5, 5), center(&map, 30, 30), 1).unwrap();
    let n = env.observation().graph.len();
    assert!(matches!(env.step(n), Err(NavError::Argument(_))));
    env.step(0).unwrap();
    assert_eq!(env.steps(), 1);
}

#[test]
fn reaching_goal_in_view() {
    let map = arena(40);
    let (s, g) = (center(&map, 10, 10), center(&map, 25, 10));
    let mut env = NavEnv::reset(small_cfg(), map.clone(), s, g, 1).unwrap();
    assert!(env.observation().goal_in_nodes);
    let r = env.step(0).unwrap();
    assert_eq!(r.outcome, Outcome::Success);
    assert!(r.done);
    // traversal stops once within the success radius
    assert!((env.d_goal() - 0.2).abs() < 1e-9);
    assert!((r.reward - (20.0 - 1.0 + 2.0 * 1.3)).abs() < 1e-9);
    assert!((r.path_len_delta - 1.3).abs() < 1e-9);
    assert!(matches!(env.step(0), Err(NavError::Finished)));
}

fn farthest_from_goal(env: &NavEnv) -> usize {
    let f = env.goal_field();
    (0..env.candidates().len())
        .max_by(|&a, &b| f.get(env.candidates()[a]).total_cmp(&f.get(env.candidates()[b])).then(b.cmp(&a)))
        .unwrap()
}

#[test]
fn timeout_after_129_decisions() {
    let map = arena(60);
    let mut env = NavEnv::reset(small_cfg(), map.clone(), center(&map, 5, 5), center(&map, 50, 50), 3).unwrap();
    let mut n = 0;
    while !env.is_done() {
        env.step(farthest_from_goal(&env)).unwrap();
        n += 1;
    }
    assert_eq!(env.outcome(), Outcome::Timeout);
    assert_eq!(n, 129);
    assert_eq!(env.log().len(), 130);
}

#[test]
fn oracle_segments_reach_goal_on_shortest_path() {
    for seed in 0..6 {
        let map = Arc::new(generate_map(&MapSpec::new(64, MapStyle::Rooms, 0.1, seed)).unwrap());
        let (s, g) = sample_start_goal(&map, (3.0, 5.0), &mut seeded(seed)).unwrap();
        let mut env = NavEnv::reset(small_cfg(), map.clone(), s, g, seed).unwrap();
        while !env.is_done() {
            let seg = env.oracle_segment();
            env.step_path(&seg).unwrap();
        }
        assert_eq!(env.outcome(), Outcome::Success);
        assert!(env.d_goal() <= 0.2);
        assert!(env.path_length_m() <= env.shortest_m() + 1e-9);
        assert!(env.path_length_m() >= env.shortest_m() - 0.2 - 1e-9);
        for c in env.trajectory() {
            assert!(map.is_free(*c));
        }
    }
}

fn random_episode(seed: u64) -> (NavEnv, Vec<usize>) {
    let map = Arc::new(generate_map(&MapSpec::new(48, MapStyle::Cluttered, 0.1, seed)).unwrap());
    let mut rng = seeded(seed + 100);
    let (s, g) = sample_start_goal(&map, (1.0, 3.0), &mut rng).unwrap();
    let mut env = NavEnv::reset(small_cfg(), map, s, g, seed).unwrap();
    let mut actions = Vec::new();
    while !env.is_done() && actions.len() < 20 {
        let a = if env.observation().goal_in_nodes && rng.random_bool(0.3) {
            0
        } else {
            rng.random_range(0..env.candidates().len())
        };
        actions.push(a);
        env.step(a).unwrap();
    }
    (env, actions)
}

#[test]
fn logs_replay_rewards_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let reward = RewardCfg::default();
    for seed in 0..8 {
        let (env, _) = random_episode(seed);
        let path = dir.path().join(format!("ep{seed}.jsonl"));
        write_episode_log(&path, env.log()).unwrap();
        let log = read_episode_log(&path).unwrap();
        assert_eq!(log, env.log());
        let mut sum = 0.0;
        for w in log.windows(2) {
            let r = reward.reward(w[1].outcome == Outcome::Success, w[0].d_goal, w[1].d_goal);
            assert_eq!(r.to_bits(), w[1].reward.to_bits());
            sum += r;
        }
        assert_eq!(sum, env.reward_sum());
        if env.outcome() == Outcome::Success {
            assert!(log.last().unwrap().d_goal <= 0.2);
        }
    }
}

#[test]
fn same_seed_same_actions_same_trajectory() {
    let (a, actions) = random_episode(42);
    let map = a.map().clone();
    let first = a.log()[0];
    let goal = map.geometry().center_of(a.goal());
    let mut b = NavEnv::reset(small_cfg(), map, first.pose, goal, 42).unwrap();
    for &act in &actions {
        b.step(act).unwrap();
    }
    assert_eq!(a.log(), b.log());
    assert_eq!(a.trajectory(), b.trajectory());
}

#[test]
fn belief_grows_and_stays_sound() {
    let (env, _) = random_episode(7);
    let map = env.map();
    for (i, c) in env.belief().cells().iter().enumerate() {
        if *c != Cell::Unknown {
            assert_eq!(*c, map.cells()[i]);
        }
    }
}
