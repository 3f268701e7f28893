use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::gridmap::{
    geodesic_field, BeliefMap, Cell, CellPos, ContextMap, OccupancyGrid, Pose, PGM_FREE,
};
use crate::navenv::{NavEnv, NavEnvCfg, NavNode, Observation, Outcome, TopoGraph};

fn record(outcome: Outcome, p: f64, lstar: f64) -> EpisodeRecord {
    EpisodeRecord {
        episode_id: 0,
        level: "easy".into(),
        outcome,
        steps: 1,
        p_m: p,
        lstar_m: lstar,
        reward_sum: 0.0,
        wall_ms: 0.0,
        trajectory: Vec::new(),
        log: Vec::new(),
        map: None,
    }
}

fn env_cfg() -> NavEnvCfg {
    NavEnvCfg {
        context_h: 64,
        context_w: 64,
        ..NavEnvCfg::default()
    }
}

#[test]
fn metric_examples() {
    let fails = vec![record(Outcome::Timeout, 5.0, 3.0), record(Outcome::Stuck, 1.0, 2.0)];
    let m = compute_sr_spl(&fails).unwrap();
    assert_eq!((m.sr, m.spl), (0.0, 0.0));
    assert_eq!(record(Outcome::Success, 8.0, 4.0).spl_term(), 0.5);
    assert_eq!(record(Outcome::Success, 4.0, 4.0).spl_term(), 1.0);
    let m = compute_sr_spl(&[record(Outcome::Success, 8.0, 4.0), record(Outcome::Timeout, 1.0, 4.0)]).unwrap();
    assert_eq!((m.sr, m.spl), (50.0, 25.0));
    assert!(matches!(compute_sr_spl(&[]), Err(EvalError::Argument(_))));
}

proptest! {
    #[test]
    fn spl_never_exceeds_sr(eps in prop::collection::vec((0u8..4, 0.01f64..50.0, 0.01f64..50.0), 1..60)) {
        let outcomes = [Outcome::Success, Outcome::Timeout, Outcome::Stuck, Outcome::Success];
        let rs: Vec<EpisodeRecord> = eps.iter().map(|(o, p, l)| record(outcomes[*o as usize], *p, *l)).collect();
        let m = compute_sr_spl(&rs).unwrap();
        prop_assert!(m.spl <= m.sr + 1e-9);
        prop_assert!(m.spl >= 0.0 && m.sr <= 100.0);
        prop_assert_eq!(m, compute_sr_spl(&rs).unwrap());
    }
}

#[test]
fn astar_on_hand_maps() {
    let corridor = OccupancyGrid::from_ascii(&["#######", "#.....#", "#######"], 0.1).unwrap();
    let g = corridor.geometry();
    let d = oracle_astar(&corridor, g.center_of(CellPos::new(1, 1)), g.center_of(CellPos::new(5, 1))).unwrap();
    assert!((d - 0.4).abs() < 1e-12);
    let blocked = OccupancyGrid::from_ascii(&["#######", "#..#..#", "#######"], 0.1).unwrap();
    let g = blocked.geometry();
    assert!(oracle_astar(&blocked, g.center_of(CellPos::new(1, 1)), g.center_of(CellPos::new(5, 1))).is_err());
}

#[test]
fn astar_equals_distance_field() {
    let spec = DifficultySpec::for_level(Level::Easy);
    for id in 0..4 {
        let ep = spec.episode(3, Split::Test, id).unwrap();
        let goal = ep.map.validate_pose(ep.goal).unwrap();
        let field = geodesic_field(ep.map.as_ref(), goal).unwrap();
        let g = ep.map.geometry();
        for (k, c) in ep.map.free_cells().enumerate() {
            if k % 97 != 0 {
                continue;
            }
            let want = field.get(c);
            match oracle_astar(&ep.map, g.center_of(c), ep.goal) {
                Ok(d) => assert_eq!(d, want, "{c}"),
                Err(_) => assert!(want.is_infinite()),
            }
        }
    }
}

#[test]
fn difficulty_levels_are_ordered() {
    let [e, m, h] = Level::ALL.map(DifficultySpec::for_level);
    assert!(e.size_m < m.size_m && m.size_m < h.size_m);
    assert!(e.density < m.density && m.density < h.density);
    assert!(e.lstar_max_m <= m.lstar_min_m && m.lstar_max_m <= h.lstar_min_m);
    assert_eq!((e.cells(), m.cells(), h.cells()), (128, 256, 384));
    assert_eq!("hard".parse::<Level>().unwrap(), Level::Hard);
    assert!("extreme".parse::<Level>().is_err());
}

#[test]
fn episodes_are_reproducible_and_splits_differ() {
    let spec = DifficultySpec::for_level(Level::Easy);
    let a = spec.episode(11, Split::Test, 5).unwrap();
    let b = spec.episode(11, Split::Test, 5).unwrap();
    let t = spec.episode(11, Split::Train, 5).unwrap();
    assert_eq!(a.map.cells(), b.map.cells());
    assert_eq!((a.start, a.goal, a.env_seed), (b.start, b.goal, b.env_seed));
    assert!(a.map.cells() != t.map.cells() || a.start != t.start);
    let d = oracle_astar(&a.map, a.start, a.goal).unwrap();
    assert!((spec.lstar_min_m..=spec.lstar_max_m).contains(&d));
}

#[test]
fn oracle_on_two_step_map_is_exact() {
    let map = Arc::new(OccupancyGrid::from_ascii(&["#######", "#.....#", "#######"], 0.1).unwrap());
    let g = *map.geometry();
    let mut env = NavEnv::reset(env_cfg(), map, g.center_of(CellPos::new(1, 1)), g.center_of(CellPos::new(5, 1)), 0).unwrap();
    let r = run_episode(&mut env, &mut OracleActor).unwrap();
    assert_eq!(r.outcome, Outcome::Success);
    // stops on entering the success radius, two cells short of the goal
    assert!((r.p_m - 0.2).abs() < 1e-12 && (r.lstar_m - 0.4).abs() < 1e-12);
    assert_eq!(r.spl_term(), 1.0);
    assert_eq!(r.steps, 1);
}

#[test]
fn oracle_is_perfect_on_test_episodes() {
    let spec = DifficultySpec::for_level(Level::Easy);
    let rs = evaluate(&spec, &env_cfg(), 6, 1, 2, &|_| Box::new(OracleActor)).unwrap();
    let m = compute_sr_spl(&rs).unwrap();
    assert_eq!((m.sr, m.spl), (100.0, 100.0));
}

#[test]
fn evaluation_ignores_worker_count() {
    let spec = DifficultySpec::for_level(Level::Easy);
    let f = |id: usize| -> Box<dyn Actor> { Box::new(RandomActor::new(id as u64)) };
    let a = evaluate(&spec, &env_cfg(), 4, 9, 1, &f).unwrap();
    let b = evaluate(&spec, &env_cfg(), 4, 9, 3, &f).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.outcome, x.steps, x.reward_sum, &x.trajectory), (y.outcome, y.steps, y.reward_sum, &y.trajectory));
    }
}

#[test]
fn log_reward_sum_replays_exactly() {
    let spec = DifficultySpec::for_level(Level::Easy);
    let rs = evaluate(&spec, &env_cfg(), 3, 2, 1, &|id| Box::new(RandomActor::new(id as u64))).unwrap();
    for r in rs {
        let sum = r.log.iter().fold(0.0, |acc, l| acc + l.reward);
        assert_eq!(sum, r.reward_sum);
        assert_eq!(r.log.last().unwrap().outcome, r.outcome);
    }
}

#[test]
fn farthest_actor_never_succeeds_on_hard_maps() {
    let spec = DifficultySpec::for_level(Level::Hard);
    let rs = evaluate(&spec, &env_cfg(), 2, 4, 2, &|_| Box::new(FarthestActor)).unwrap();
    for r in rs {
        assert_ne!(r.outcome, Outcome::Success);
        assert_eq!(r.spl_term(), 0.0);
    }
}

/// 9x9 room: border walls, everything else known FREE except `unknown`.
fn scene(unknown: &[(usize, usize)], nodes: &[(usize, usize)]) -> (BeliefMap, Observation) {
    let rows: Vec<String> = (0..9)
        .map(|y| (0..9).map(|x| if x == 0 || y == 0 || x == 8 || y == 8 { '#' } else { '.' }).collect())
        .collect();
    let rows: Vec<&str> = rows.iter().map(String::as_str).collect();
    let map = OccupancyGrid::from_ascii(&rows, 0.1).unwrap();
    let known = BeliefMap::fully_known(&map);
    let mut cells = known.cells().to_vec();
    for &(x, y) in unknown {
        cells[map.geometry().index(CellPos::new(x, y))] = Cell::Unknown;
    }
    let belief = BeliefMap::from_cells(*map.geometry(), cells).unwrap();
    let g = map.geometry();
    let graph = TopoGraph {
        nodes: nodes
            .iter()
            .map(|&(x, y)| NavNode {
                pos: g.center_of(CellPos::new(x, y)),
                dir_goal: [0.0, 0.0],
                utility: 0,
                visited: false,
                rel_pos: [0.0, 0.0],
            })
            .collect(),
        edges: Vec::new(),
    };
    let obs = Observation {
        context: ContextMap::filled(8, 8, 0.5),
        graph,
        goal_in_nodes: false,
        pose: Pose::new(0.45, 0.45),
    };
    (belief, obs)
}

#[test]
fn frontier_baseline_hand_scenes() {
    let goal = CellPos::new(4, 7);
    let nodes = [(1, 4), (7, 4)];
    // one frontier region behind node 1
    let (b, o) = scene(&[(7, 1), (6, 1)], &nodes);
    assert_eq!(nearest_frontier_choice(&b, &o, goal), 1);
    let (b, o) = scene(&[(1, 1), (2, 1)], &nodes);
    assert_eq!(nearest_frontier_choice(&b, &o, goal), 0);
    // fully explored: nearest to goal, ties to the lower index
    let (b, o) = scene(&[], &[(1, 2), (5, 6), (3, 6)]);
    assert_eq!(nearest_frontier_choice(&b, &o, goal), 1);
    let (b, o) = scene(&[], &nodes);
    assert_eq!(nearest_frontier_choice(&b, &o, goal), 0);
    // goal among candidates is taken directly
    let (b, mut o) = scene(&[(7, 1)], &nodes);
    o.goal_in_nodes = true;
    assert_eq!(nearest_frontier_choice(&b, &o, goal), 0);
    // pure function of its inputs
    let (b, o) = scene(&[(7, 1), (6, 1)], &nodes);
    assert_eq!(nearest_frontier_choice(&b, &o, goal), nearest_frontier_choice(&b, &o, goal));
}

#[test]
fn report_files_are_consistent() {
    let spec = DifficultySpec::for_level(Level::Easy);
    let mut rs = evaluate(&spec, &env_cfg(), 5, 6, 1, &|id| Box::new(RandomActor::new(id as u64))).unwrap();
    rs.extend(evaluate(&spec, &env_cfg(), 2, 6, 1, &|_| Box::new(OracleActor)).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&rs, dir.path(), 3).unwrap();
    let text = std::fs::read_to_string(&files.episodes_csv).unwrap();
    assert_eq!(text.lines().count(), rs.len() + 1);
    assert_eq!(
        text.lines().next().unwrap(),
        "episode_id,level,outcome,steps,p_m,lstar_m,spl_term,reward_sum,wall_ms"
    );
    let rows = read_episodes_csv(&files.episodes_csv).unwrap();
    let wins = rows.iter().filter(|r| r.outcome == Outcome::Success).count();
    let all = files.summary.iter().find(|s| s.level == "all").unwrap();
    assert_eq!(all.sr, 100.0 * wins as f64 / rows.len() as f64);
    let spl = 100.0 * rows.iter().map(|r| r.spl_term).sum::<f64>() / rows.len() as f64;
    assert!((all.spl - spl).abs() < 1e-9);
    assert_eq!(files.overlays.len(), 3);
    let (w, h, px) = crate::gridmap::read_pgm(&files.overlays[0]).unwrap();
    assert_eq!((w, h), (rs[0].map.as_ref().unwrap().width(), rs[0].map.as_ref().unwrap().height()));
    assert!(px.iter().any(|v| *v != PGM_FREE && *v != 0));
}

#[test]
fn unwritable_report_path_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    std::fs::write(&file, b"x").unwrap();
    let err = emit_report(&[record(Outcome::Success, 1.0, 1.0)], &file.join("sub"), 0).unwrap_err();
    assert!(matches!(err, EvalError::Io(_) | EvalError::Csv(_)));
}
