//! Acceptance suite. Each criterion prints one `PASS` / `FAIL` / `SKIP` line.
//!
//! The two long-running criteria (reconstruction sanity, end-to-end learning)
//! are skipped unless `--include-ignored` or `--ignored` is passed:
//!
//! ```text
//! cargo test -p macronav --test acceptance -- --include-ignored
//! ```
//!
//! A positional argument filters criteria by substring.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::Rng;

use macronav::encoder::{
    pretrain_step, tokenize, EncoderCfg, PretrainCfg, Pretrainer, SslModel,
};
use macronav::evalkit::{
    compute_sr_spl, evaluate, run_episode, Actor, DifficultySpec, EpisodeRecord, FarthestActor,
    Level, NearestFrontierActor, OracleActor, RandomActor, Split,
};
use macronav::gridmap::{
    generate_map, geodesic_field, Cell, CellPos, ContextMap, MapSpec, MapStyle, OccupancyGrid,
};
use macronav::maskgen::{
    build_pretrain_batch, fov_mask, fov_mask_at, mae_mask, spm_mask, ContextSampler, MapPool,
    MaskParams, MaskRanges, PretrainMixCfg, PretrainSources, TaskKind,
};
use macronav::navenv::{read_episode_log, write_episode_log, NavEnv, NavEnvCfg, Outcome};
use macronav::nn::{
    grad_check, soft_update, AdamW, AdamWConfig, Graph, LstmCell, MultiHeadAttention, ParamId,
    ParamStore, Tensor, TransformerLayer,
};
use macronav::policy::{
    run_toy, Agent, LstmState, ObsRecord, PolicyCfg, PrevInfo, RlCfg, RlTrainer, SacCfg,
    ToyRunCfg, LOG_ALPHA,
};
use macronav::rng::seeded;

type Check = fn() -> Result<(bool, String)>;

struct Criterion {
    name: &'static str,
    heavy: bool,
    run: Check,
}

const CRITERIA: &[Criterion] = &[
    Criterion { name: "mask generators", heavy: false, run: masks },
    Criterion { name: "numeric gradients", heavy: false, run: numeric },
    Criterion { name: "reconstruction sanity", heavy: true, run: reconstruction },
    Criterion { name: "gradient isolation", heavy: false, run: gradient_isolation },
    Criterion { name: "reward oracle", heavy: false, run: reward_oracle },
    Criterion { name: "geodesic and metric oracles", heavy: false, run: geodesic_and_metrics },
    Criterion { name: "discrete sac", heavy: false, run: discrete_sac },
    Criterion { name: "end-to-end learning", heavy: true, run: end_to_end },
    Criterion { name: "determinism", heavy: false, run: determinism },
];

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let heavy = args.iter().any(|a| a == "--include-ignored" || a == "--ignored");
    let only_heavy = args.iter().any(|a| a == "--ignored");
    // libtest flags such as --nocapture or --test-threads are accepted and ignored
    let filter: Option<&String> = args.iter().find(|a| !a.starts_with('-'));
    if args.iter().any(|a| a == "--list") {
        for c in CRITERIA {
            println!("{}: test", c.name);
        }
        return;
    }

    let mut failed = 0;
    for c in CRITERIA {
        if filter.is_some_and(|f| !c.name.contains(f.as_str())) || (only_heavy && !c.heavy) {
            continue;
        }
        if c.heavy && !heavy {
            println!("SKIP  {} (long-running, pass --include-ignored)", c.name);
            continue;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run));
        let secs = t0.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, format!("error: {e:#}")),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panic: {msg}"))
            }
        };
        if !pass {
            failed += 1;
        }
        println!("{}  {} [{secs:.1} s] {detail}", if pass { "PASS" } else { "FAIL" }, c.name);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn within(t0: Instant, limit: Duration) -> (bool, String) {
    let e = t0.elapsed();
    (e < limit, format!("runtime {:.1} s (limit {} s)", e.as_secs_f64(), limit.as_secs()))
}

// ---------- masks ----------

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        self.0[ra] = rb;
    }
}

fn eight_connected(masked: &[usize], rows: usize, cols: usize) -> bool {
    if masked.is_empty() {
        return true;
    }
    let mut on = vec![false; rows * cols];
    for &i in masked {
        on[i] = true;
    }
    let mut uf = UnionFind::new(rows * cols);
    for &i in masked {
        let (r, c) = ((i / cols) as isize, (i % cols) as isize);
        for dr in -1..=1isize {
            for dc in -1..=1isize {
                let (nr, nc) = (r + dr, c + dc);
                if nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols {
                    let j = nr as usize * cols + nc as usize;
                    if on[j] {
                        uf.union(i, j);
                    }
                }
            }
        }
    }
    let root = uf.find(masked[0]);
    masked.iter().all(|&i| uf.find(i) == root)
}

fn masks() -> Result<(bool, String)> {
    let t0 = Instant::now();
    let mut rng = seeded(0xA11CE);

    let mut spm_disconnected = 0;
    let mut spm_over = 0;
    for _ in 0..10_000 {
        let rows = rng.random_range(1..=24usize);
        let cols = rng.random_range(1..=24usize);
        let rho = rng.random_range(0.0..=1.0f64);
        let s = rng.random_range(0.0..=1.0f64);
        let n = rows * cols;
        let m = spm_mask((rows, cols), rho, s, &mut rng)?;
        if !eight_connected(&m.masked, rows, cols) {
            spm_disconnected += 1;
        }
        if m.masked.len() as f64 / n as f64 > rho + 1.0 / n as f64 {
            spm_over += 1;
        }
    }

    // ring predicate with radii recomputed from the area fractions
    let mut fov_mismatch = 0;
    for _ in 0..1_000 {
        let rows = rng.random_range(1..=24usize);
        let cols = rng.random_range(1..=24usize);
        let rho_fov = rng.random_range(0.01..=0.5f64);
        let rho_exp = rng.random_range(0.0..=0.5f64);
        let n = rows * cols;
        let m = fov_mask((rows, cols), rho_fov, rho_exp, &mut rng)?;
        let MaskParams::Fov { center, .. } = m.params else {
            bail!("fov mask without fov parameters");
        };
        let r_fov = (rho_fov * n as f64 / std::f64::consts::PI).sqrt();
        let r_exp = ((rho_fov + rho_exp) * n as f64 / std::f64::consts::PI).sqrt();
        let (cr, cc) = (center / cols, center % cols);
        let mut ring = Vec::new();
        let mut core = Vec::new();
        for i in 0..n {
            let (r, c) = (i / cols, i % cols);
            let d = (((r as f64 - cr as f64).powi(2)) + (c as f64 - cc as f64).powi(2)).sqrt();
            if d <= r_fov {
                core.push(i);
            } else if d <= r_exp {
                ring.push(i);
            }
        }
        if ring != m.masked || core != m.core {
            fov_mismatch += 1;
        }
    }

    let mut mae_count_err = 0;
    for _ in 0..2_000 {
        let rows = rng.random_range(1..=24usize);
        let cols = rng.random_range(1..=24usize);
        let ratio = rng.random_range(0.0..=1.0f64);
        let m = mae_mask((rows, cols), ratio, &mut rng)?;
        if m.masked.len() != (ratio * (rows * cols) as f64).floor() as usize {
            mae_count_err += 1;
        }
    }
    let (n, ratio, draws) = (64usize, 0.25, 20_000usize);
    let mut hits = vec![0usize; n];
    for _ in 0..draws {
        for i in mae_mask((8, 8), ratio, &mut rng)?.masked {
            hits[i] += 1;
        }
    }
    let sigma = (ratio * (1.0 - ratio) / draws as f64).sqrt();
    let worst_z = hits
        .iter()
        .map(|&h| ((h as f64 / draws as f64) - ratio).abs() / sigma)
        .fold(0.0, f64::max);

    let (fast, time) = within(t0, Duration::from_secs(60));
    let pass = spm_disconnected == 0
        && spm_over == 0
        && fov_mismatch == 0
        && mae_count_err == 0
        && worst_z <= 3.0
        && fast;
    Ok((
        pass,
        format!(
            "spm disconnected {spm_disconnected}/10000, over budget {spm_over}; fov mismatches \
             {fov_mismatch}/1000; mae count errors {mae_count_err}/2000, worst frequency {worst_z:.2} sigma; {time}"
        ),
    ))
}

// ---------- numeric ----------

fn weighted_sum(g: &mut Graph, y: macronav::nn::Var, w: &Tensor) -> macronav::nn::Var {
    let wv = g.input(w.clone());
    let p = g.mul(y, wv);
    g.sum(p)
}

fn numeric() -> Result<(bool, String)> {
    let t0 = Instant::now();
    let mut rng = seeded(0xBEEF);
    let mut worst: Vec<(&str, f64)> = Vec::new();

    {
        let mut store = ParamStore::new();
        let att = MultiHeadAttention::init(&mut store, "sa", 8, 2, &mut rng)?;
        let x = Tensor::randn(&[5, 8], 1.0, &mut rng);
        let w = Tensor::randn(&[5, 8], 1.0, &mut rng);
        let ids: Vec<ParamId> = store.ids().collect();
        let r = grad_check(&store, &ids, 1e-2, None, |g| {
            let xv = g.input(x.clone());
            let y = att.forward(g, xv, xv);
            weighted_sum(g, y, &w)
        })?;
        worst.push(("mhsa", r.max_rel_err));
    }
    {
        let mut store = ParamStore::new();
        let att = MultiHeadAttention::init(&mut store, "ca", 8, 4, &mut rng)?;
        let q = Tensor::randn(&[3, 8], 1.0, &mut rng);
        let kv = Tensor::randn(&[6, 8], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 8], 1.0, &mut rng);
        let ids: Vec<ParamId> = store.ids().collect();
        let r = grad_check(&store, &ids, 1e-2, None, |g| {
            let qv = g.input(q.clone());
            let kvv = g.input(kv.clone());
            let y = att.forward(g, qv, kvv);
            weighted_sum(g, y, &w)
        })?;
        worst.push(("mhca", r.max_rel_err));
    }
    {
        let mut store = ParamStore::new();
        let layer = TransformerLayer::init(&mut store, "t", 8, 2, &mut rng)?;
        let x = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let w = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let ids: Vec<ParamId> = store.ids().collect();
        let r = grad_check(&store, &ids, 1e-2, None, |g| {
            let xv = g.input(x.clone());
            let y = layer.forward(g, xv);
            weighted_sum(g, y, &w)
        })?;
        worst.push(("post-norm layer", r.max_rel_err));
    }
    {
        let mut store = ParamStore::new();
        let cell = LstmCell::init(&mut store, "l", 3, 5, &mut rng)?;
        let xs: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[1, 3], 1.0, &mut rng)).collect();
        let w = Tensor::randn(&[1, 5], 1.0, &mut rng);
        let ids: Vec<ParamId> = store.ids().collect();
        let r = grad_check(&store, &ids, 1e-2, None, |g| {
            let mut h = g.input(Tensor::zeros(&[1, 5]));
            let mut c = g.input(Tensor::zeros(&[1, 5]));
            for x in &xs {
                let xv = g.input(x.clone());
                (h, c) = cell.forward(g, xv, h, c);
            }
            let hc = g.add(h, c);
            weighted_sum(g, hc, &w)
        })?;
        worst.push(("lstm", r.max_rel_err));
    }
    {
        let cfg = EncoderCfg {
            d: 16,
            layers: 1,
            heads: 2,
            patch: 4,
            map_h: 16,
            map_w: 16,
            dec_dim: 8,
            dec_layers: 1,
            dec_heads: 2,
        };
        let mut store = ParamStore::new();
        let model = SslModel::init(&mut store, cfg, &mut rng)?;
        let vals = [0.0f32, 0.5, 1.0];
        let map = ContextMap::from_vec(16, 16, (0..256).map(|_| vals[rng.random_range(0..3)]).collect())?;
        let tokens = tokenize(&map, 4)?;
        let ids: Vec<ParamId> = store.ids().collect();
        let cases = [
            ("spm loss", spm_mask((4, 4), 0.5, 0.7, &mut rng)?),
            ("fov loss", fov_mask_at((4, 4), 0.1, 0.3, 5)?),
            ("mae loss", mae_mask((4, 4), 0.75, &mut rng)?),
        ];
        for (name, mask) in &cases {
            let r = grad_check(&store, &ids, 1e-2, Some(6), |g| {
                model.forward(g, &tokens, mask).expect("ssl forward").1
            })?;
            worst.push((name, r.max_rel_err));
        }
    }
    {
        let enc = EncoderCfg {
            d: 8,
            layers: 1,
            heads: 2,
            patch: 4,
            map_h: 8,
            map_w: 8,
            dec_dim: 8,
            dec_layers: 0,
            dec_heads: 1,
        };
        let pol = PolicyCfg { d_model: 8, layers: 1, heads: 2, lstm_dim: 6 };
        let mut store = ParamStore::new();
        let agent = Agent::init(&mut store, enc, pol, 0.2, &mut rng)?;
        // larger weights than the init so the check is not dominated by tiny gradients
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            if store.name(id) != LOG_ALPHA {
                let shape = store.get(id).shape().to_vec();
                store.set(id, Tensor::uniform(&shape, 0.5, &mut rng))?;
            }
        }
        let n = 4;
        let nf = macronav::navenv::NODE_FEATURES;
        let obs = ObsRecord {
            ctx_h: 8,
            ctx_w: 8,
            context: (0..64).map(|_| rng.random_range(0..3u8)).collect(),
            nodes: (0..n * nf).map(|_| rng.random_range(-1.0..1.0f32)).collect(),
        };
        let st = LstmState {
            h: (0..6).map(|_| rng.random_range(-0.5..0.5f32)).collect(),
            c: (0..6).map(|_| rng.random_range(-0.5..0.5f32)).collect(),
        };
        let mut prev = PrevInfo::default();
        prev.features.iter_mut().for_each(|f| *f = rng.random_range(-1.0..1.0));
        prev.reward = 0.7;
        let w = Tensor::from_vec(&[1, n], vec![0.3, -1.2, 0.8, 0.5])?;
        let mut params = agent.actor.param_ids(&store);
        params.extend(store.ids_with_prefix(macronav::encoder::ENCODER_PREFIX));
        let r = grad_check(&store, &params, 1e-2, Some(6), |g| {
            let zc = agent.encode(g, &obs.context_map()).expect("encode");
            let x = agent.inputs(g, &obs, &st, &prev).expect("inputs");
            let o = agent.run_trunk(g, &agent.actor, zc, &x);
            let l = agent.actor.logits(g, &o);
            let lp = g.log_softmax(l);
            weighted_sum(g, lp, &w)
        })?;
        worst.push(("actor pipeline", r.max_rel_err));
    }

    // softmax rows over a wide range of logit scales
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let mut softmax_err = 0.0f64;
    for (cols, scale) in [(1, 1.0), (3, 1.0), (17, 5.0), (64, 20.0), (257, 50.0)] {
        let x = g.input(Tensor::randn(&[8, cols], scale, &mut rng));
        let p = g.softmax(x);
        let t = g.value(p).clone();
        for r in 0..t.rows() {
            let s: f64 = t.row(r).iter().map(|v| *v as f64).sum();
            softmax_err = softmax_err.max((s - 1.0).abs());
        }
    }
    let mut ln_err = 0.0f64;
    for (rows, d, scale) in [(4, 16, 1.0), (8, 64, 3.0), (2, 128, 0.5)] {
        let x = g.input(Tensor::randn(&[rows, d], scale, &mut rng));
        let gamma = g.input(Tensor::full(&[d], 1.0));
        let beta = g.input(Tensor::zeros(&[d]));
        let y = g.layer_norm(x, gamma, beta);
        let t = g.value(y).clone();
        for r in 0..rows {
            let row: Vec<f64> = t.row(r).iter().map(|v| *v as f64).collect();
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            ln_err = ln_err.max((var - 1.0).abs());
        }
    }

    let max_grad = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let (fast, time) = within(t0, Duration::from_secs(120));
    let pass = max_grad < 1e-2 && softmax_err <= 1e-6 && ln_err <= 1e-4 && fast;
    let per: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Ok((
        pass,
        format!(
            "grad rel err [{}]; softmax row sum err {softmax_err:.1e}; LN variance err {ln_err:.1e}; {time}",
            per.join(", ")
        ),
    ))
}

// ---------- pretraining ----------

fn synthetic_sources(mix: &str, total: usize, size: usize, seed: u64) -> Result<PretrainSources> {
    let mix = PretrainMixCfg::parse(mix)?;
    let mut pools = Vec::new();
    let weight_sum: f64 = mix.entries.iter().map(|e| e.1).sum();
    for (name, w) in &mix.entries {
        let style: MapStyle = name.parse()?;
        let count = ((total as f64 * w / weight_sum).round() as usize).max(1);
        pools.push(MapPool::synthetic(style, count, size, (0.0, 0.2), seed)?);
    }
    Ok(PretrainSources::new(&mix, pools)?)
}

fn reconstruction() -> Result<(bool, String)> {
    let t0 = Instant::now();
    let cfg = PretrainCfg { seed: 2024, ..PretrainCfg::default() };
    let enc = cfg.encoder;
    let sources = synthetic_sources("rooms:0.5,maze:0.25,cluttered:0.25", 500, 128, 2024)?;
    let maps: usize = sources.pools().iter().map(|p| p.maps.len()).sum();
    let mut pt = Pretrainer::new(cfg, sources, ContextSampler::new(enc.map_h, enc.patch))?;
    pt.run(|m| {
        if (m.step + 1) % 250 == 0 {
            eprintln!("  reconstruction step {} ({:.0} s)", m.step + 1, t0.elapsed().as_secs_f64());
        }
    })?;
    let steps = pt.log.steps.len();
    let mut pass = true;
    let mut parts = Vec::new();
    for task in TaskKind::ALL {
        let first = pt.log.task_mean(task, 0..100).context("task absent from the first 100 steps")?;
        let last = pt
            .log
            .task_mean(task, steps - 100..steps)
            .context("task absent from the last 100 steps")?;
        let drop = 1.0 - last / first;
        pass &= drop >= 0.5;
        parts.push(format!("{task} {first:.4} -> {last:.4} ({:.0}% lower)", 100.0 * drop));
    }
    let (fast, time) = within(t0, Duration::from_secs(30 * 60));
    Ok((
        pass && fast,
        format!(
            "d{}/L{} on {maps} maps, {steps} steps: {}; {time}",
            enc.d,
            enc.layers,
            parts.join(", ")
        ),
    ))
}

fn gradient_isolation() -> Result<(bool, String)> {
    let enc = EncoderCfg {
        d: 32,
        layers: 2,
        heads: 4,
        patch: 8,
        map_h: 64,
        map_w: 64,
        dec_dim: 32,
        dec_layers: 1,
        dec_heads: 4,
    };
    let sources = synthetic_sources("rooms:1", 8, 96, 5)?;
    let sampler = ContextSampler::new(64, 8);
    let mut rng = seeded(6);
    let mut violations = Vec::new();
    for task in TaskKind::ALL {
        let mut store = ParamStore::new();
        let model = SslModel::init(&mut store, enc, &mut rng)?;
        let mut opt = AdamW::new(AdamWConfig { lr: 1e-3, weight_decay: 0.05, ..Default::default() });
        let before = store.clone();
        for _ in 0..3 {
            let batch = build_pretrain_batch(&sources, &[task], &MaskRanges::default(), &sampler, 2, &mut rng)?;
            ensure!(batch.task == task, "batch drew {} instead of {task}", batch.task);
            pretrain_step(&model, &mut store, &mut opt, &batch, 1e-3)?;
        }
        for other in TaskKind::ALL {
            let id = model.encoder.mask_token(other);
            let same = store
                .get(id)
                .data()
                .iter()
                .zip(before.get(id).data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            // the trained task's own token must move, every other one must not
            if same == (other == task) {
                violations.push(format!("step on {task}: {other} token {}", if same { "unchanged" } else { "changed" }));
            }
        }
    }
    Ok((
        violations.is_empty(),
        if violations.is_empty() {
            "3 steps per task; own token updated, other tokens bitwise unchanged".into()
        } else {
            violations.join("; ")
        },
    ))
}

// ---------- exact geodesic oracle ----------

/// Path cost `a + b * sqrt(2)` compared exactly in integers.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct Cost(u32, u32);

impl Ord for Cost {
    fn cmp(&self, o: &Self) -> Ordering {
        // a1 + b1 r < a2 + b2 r  <=>  x < y r with x = a1 - a2, y = b2 - b1
        let x = self.0 as i64 - o.0 as i64;
        let y = o.1 as i64 - self.1 as i64;
        if x == 0 && y == 0 {
            return Ordering::Equal;
        }
        match (x >= 0, y >= 0) {
            (false, true) => Ordering::Less,
            (true, false) => Ordering::Greater,
            (true, true) => {
                if x * x < 2 * y * y {
                    Ordering::Less
                } else {
                    Ordering::Greater
                }
            }
            (false, false) => {
                if x * x > 2 * y * y {
                    Ordering::Less
                } else {
                    Ordering::Greater
                }
            }
        }
    }
}

impl PartialOrd for Cost {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Straight / diagonal step counts of the shortest 8-connected path to `goal`
/// for every cell. A diagonal needs both orthogonal cells it passes free.
fn exact_dijkstra(map: &OccupancyGrid, goal: CellPos) -> Vec<Option<Cost>> {
    let (w, h) = (map.width(), map.height());
    let free = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && map.get(CellPos::new(x as usize, y as usize)) == Cell::Free
    };
    let mut best: Vec<Option<Cost>> = vec![None; w * h];
    let mut heap = BinaryHeap::new();
    if !free(goal.x as isize, goal.y as isize) {
        return best;
    }
    best[goal.y * w + goal.x] = Some(Cost(0, 0));
    heap.push(std::cmp::Reverse((Cost(0, 0), goal.y * w + goal.x)));
    while let Some(std::cmp::Reverse((cost, i))) = heap.pop() {
        if best[i] != Some(cost) {
            continue;
        }
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dx in -1..=1isize {
            for dy in -1..=1isize {
                if (dx, dy) == (0, 0) || !free(x + dx, y + dy) {
                    continue;
                }
                let diag = dx != 0 && dy != 0;
                if diag && !(free(x + dx, y) && free(x, y + dy)) {
                    continue;
                }
                let next = if diag { Cost(cost.0, cost.1 + 1) } else { Cost(cost.0 + 1, cost.1) };
                let j = (y + dy) as usize * w + (x + dx) as usize;
                if best[j].is_none_or(|b| next < b) {
                    best[j] = Some(next);
                    heap.push(std::cmp::Reverse((next, j)));
                }
            }
        }
    }
    best
}

fn meters(c: Option<Cost>, res: f64) -> f64 {
    c.map_or(f64::INFINITY, |c| res * (c.0 as f64 + c.1 as f64 * std::f64::consts::SQRT_2))
}

fn noise_map(size: usize, p: f64, rng: &mut impl Rng) -> Result<OccupancyGrid> {
    let cells = (0..size * size)
        .map(|i| {
            let (x, y) = (i % size, i / size);
            let border = x == 0 || y == 0 || x == size - 1 || y == size - 1;
            if border || rng.random_bool(p) {
                Cell::Occupied
            } else {
                Cell::Free
            }
        })
        .collect();
    Ok(OccupancyGrid::new(size, size, 0.1, cells)?)
}

// ---------- reward oracle ----------

fn reward_oracle() -> Result<(bool, String)> {
    let dir = tempfile::tempdir()?;
    let spec = DifficultySpec::for_level(Level::Easy);
    let cfg = NavEnvCfg::default();
    let (mut reward_mismatch, mut dist_mismatch, mut outcome_errors) = (0, 0, 0);
    let mut counts = std::collections::BTreeMap::new();
    let mut records = 0;
    for id in 0..100 {
        let ep = spec.episode(77, Split::Test, id)?;
        let mut env = NavEnv::reset(cfg, ep.map.clone(), ep.start, ep.goal, ep.env_seed)?;
        let mut actor: Box<dyn Actor> = match id % 4 {
            0 => Box::new(OracleActor),
            1 => Box::new(NearestFrontierActor),
            2 => Box::new(RandomActor::new(id as u64)),
            _ => Box::new(FarthestActor),
        };
        run_episode(&mut env, actor.as_mut())?;
        let path = dir.path().join(format!("episode_{id:03}.jsonl"));
        write_episode_log(&path, env.log())?;
        let log = read_episode_log(&path)?;
        ensure!(log.as_slice() == env.log(), "episode {id}: log does not round-trip");

        let geom = *ep.map.geometry();
        let goal = geom.cell_of(ep.goal).context("goal off the grid")?;
        let field = exact_dijkstra(&ep.map, goal);
        let d: Vec<f64> = log
            .iter()
            .map(|r| {
                let c = geom.cell_of(r.pose).expect("pose on the grid");
                meters(field[geom.index(c)], geom.resolution)
            })
            .collect();
        records += log.len();
        for (t, r) in log.iter().enumerate() {
            if r.d_goal.to_bits() != d[t].to_bits() {
                dist_mismatch += 1;
            }
            if t == 0 {
                continue;
            }
            let success = r.outcome == Outcome::Success;
            let want = if success { 20.0 } else { 0.0 } + 1.0 * -1.0 + 2.0 * (d[t - 1] - d[t]);
            if r.reward.to_bits() != want.to_bits() {
                reward_mismatch += 1;
            }
        }
        let last = log.last().expect("reset record");
        let within = d[log.len() - 1] <= 0.2;
        let ok = match last.outcome {
            Outcome::Success => within && last.step <= 128,
            Outcome::Timeout => !within && last.step > 128,
            Outcome::Stuck => !within && last.step <= 128,
            Outcome::Running => false,
        };
        // intermediate records are neither successes nor past the step limit
        let mid_ok = log[..log.len() - 1]
            .iter()
            .zip(&d)
            .all(|(r, dist)| r.outcome == Outcome::Running && *dist > 0.2 && r.step <= 128);
        if !ok || !mid_ok {
            outcome_errors += 1;
        }
        *counts.entry(last.outcome.as_str()).or_insert(0) += 1;
    }
    let pass = reward_mismatch == 0 && dist_mismatch == 0 && outcome_errors == 0;
    Ok((
        pass,
        format!(
            "100 episodes / {records} records: reward mismatches {reward_mismatch}, distance mismatches \
             {dist_mismatch}, outcome rule violations {outcome_errors}; outcomes {counts:?}"
        ),
    ))
}

// ---------- geodesics and metrics ----------

fn geodesic_and_metrics() -> Result<(bool, String)> {
    let mut rng = seeded(0x6E0);
    let styles = [MapStyle::Rooms, MapStyle::Maze, MapStyle::Cluttered];
    let mut cell_mismatch = 0usize;
    let mut cells = 0usize;
    for m in 0..50 {
        let map = if m % 2 == 0 {
            let spec = MapSpec::new(64, styles[m / 2 % 3], rng.random_range(0.0..0.3), rng.random());
            generate_map(&spec)?
        } else {
            noise_map(64, rng.random_range(0.1..0.4), &mut rng)?
        };
        let free: Vec<CellPos> = map.free_cells().collect();
        ensure!(!free.is_empty(), "map {m} has no free cell");
        let goal = free[rng.random_range(0..free.len())];
        let field = geodesic_field(&map, goal)?;
        let oracle = exact_dijkstra(&map, goal);
        let geom = *map.geometry();
        for i in 0..geom.width * geom.height {
            let c = geom.pos(i);
            let want = oracle[i].map(|c| (c.0, c.1));
            let got_m = field.get(c);
            let want_m = meters(oracle[i], geom.resolution);
            if field.counts(c) != want || got_m.to_bits() != want_m.to_bits() {
                cell_mismatch += 1;
            }
            cells += 1;
        }
    }

    let cfg = NavEnvCfg::default();
    let mut oracle_ok = true;
    let mut oracle_parts = Vec::new();
    for (level, episodes) in [(Level::Easy, 30), (Level::Medium, 15), (Level::Hard, 8)] {
        let spec = DifficultySpec::for_level(level);
        let recs = evaluate(&spec, &cfg, episodes, 11, 1, &|_| Box::new(OracleActor))?;
        let m = compute_sr_spl(&recs)?;
        oracle_ok &= m.sr == 100.0 && m.spl == 100.0;
        oracle_parts.push(format!("{level} SR {:.1} SPL {:.1}", m.sr, m.spl));
    }

    let mut runner = TestRunner::new(PropConfig { cases: 512, ..PropConfig::default() });
    let outcome = prop_oneof![
        Just(Outcome::Success),
        Just(Outcome::Timeout),
        Just(Outcome::Stuck)
    ];
    let record = (outcome, 0.0..100.0f64, 0.01..100.0f64);
    let spl_le_sr = runner.run(&proptest::collection::vec(record, 1..40), |rows| {
        let recs: Vec<EpisodeRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, (outcome, p, l))| EpisodeRecord {
                episode_id: i,
                level: "easy".into(),
                outcome: *outcome,
                steps: 1,
                p_m: *p,
                lstar_m: *l,
                reward_sum: 0.0,
                wall_ms: 0.0,
                trajectory: Vec::new(),
                log: Vec::new(),
                map: None,
            })
            .collect();
        let m = compute_sr_spl(&recs).expect("non-empty");
        prop_assert!(m.spl <= m.sr, "SPL {} > SR {}", m.spl, m.sr);
        prop_assert!(m.spl >= 0.0);
        Ok(())
    });
    let prop_msg = match &spl_le_sr {
        Ok(()) => "SPL <= SR on 512 random record sets".to_string(),
        Err(e) => format!("SPL <= SR violated: {e}"),
    };

    let pass = cell_mismatch == 0 && oracle_ok && spl_le_sr.is_ok();
    Ok((
        pass,
        format!(
            "distance field vs exact Dijkstra: {cell_mismatch} mismatches over {cells} cells of 50 maps; \
             oracle actor {}; {prop_msg}",
            oracle_parts.join(", ")
        ),
    ))
}

// ---------- discrete SAC ----------

fn discrete_sac() -> Result<(bool, String)> {
    let cfg = ToyRunCfg::default();
    let report = run_toy(&cfg)?;

    // soft value iteration written out independently
    let mdp = &cfg.mdp;
    let alpha = cfg.alpha as f64;
    let mut q = [[0.0f64; 2]; 2];
    for _ in 0..5_000 {
        let v = |s: usize, q: &[[f64; 2]; 2]| alpha * q[s].iter().map(|x| (x / alpha).exp()).sum::<f64>().ln();
        let mut next = [[0.0f64; 2]; 2];
        for s in 0..2 {
            for a in 0..2 {
                next[s][a] = mdp.reward[s][a] + mdp.gamma * v(mdp.next[s][a], &q);
            }
        }
        q = next;
    }
    let mut err: f64 = 0.0;
    for s in 0..2 {
        for a in 0..2 {
            err = err.max((report.q1[s][a] - q[s][a]).abs());
            err = err.max((report.q2[s][a] - q[s][a]).abs());
        }
    }

    let mut store = ParamStore::new();
    let target = store.insert("target", Tensor::zeros(&[4]))?;
    let online = store.insert("online", Tensor::full(&[4], 1.0))?;
    soft_update(&mut store, &[(target, online)], 0.005)?;
    let exact = store.get(target).data().iter().all(|v| *v == 0.005f32);

    Ok((
        err < 0.05 && exact,
        format!(
            "toy MDP max |Q - Q*| {err:.4} (critic 1 {:.3?}, oracle {:.3?}); soft_update 0 -> 1 with tau 0.005 gives {}",
            report.q1,
            q,
            store.get(target).data()[0]
        ),
    ))
}

// ---------- end to end ----------

fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn end_to_end() -> Result<(bool, String)> {
    let t0 = Instant::now();
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-e2e");
    std::fs::create_dir_all(&out)?;
    let rl_steps = env_usize("MACRONAV_E2E_STEPS", 18_000);
    let pt_steps = env_usize("MACRONAV_E2E_PRETRAIN_STEPS", 3_000);
    let episodes = 100;
    let seed = 7;

    let enc = EncoderCfg {
        d: 64,
        layers: 2,
        heads: 4,
        patch: 8,
        map_h: 64,
        map_w: 64,
        dec_dim: 64,
        dec_layers: 1,
        dec_heads: 4,
    };
    let pt_cfg = PretrainCfg { encoder: enc, steps: pt_steps, batch: 8, lr: 3e-4, seed, ..PretrainCfg::default() };
    let sources = synthetic_sources("rooms:0.5,cluttered:0.5", 500, 128, seed)?;
    let mut pt = Pretrainer::new(pt_cfg, sources, ContextSampler::new(64, 8))?;
    pt.run(|m| {
        if (m.step + 1) % 500 == 0 {
            eprintln!("  e2e pretrain step {} ({:.0} s)", m.step + 1, t0.elapsed().as_secs_f64());
        }
    })?;
    let enc_ckpt = out.join("encoder.ckpt");
    pt.save(&enc_ckpt)?;
    let n = pt.log.steps.len();
    let pt_drop: Vec<String> = TaskKind::ALL
        .iter()
        .filter_map(|&t| {
            let a = pt.log.task_mean(t, 0..100)?;
            let b = pt.log.task_mean(t, n.saturating_sub(100)..n)?;
            Some(format!("{t} {:.0}%", 100.0 * (1.0 - b / a)))
        })
        .collect();
    let pt_secs = t0.elapsed().as_secs_f64();

    let mut env = NavEnvCfg::default();
    env.context_h = 64;
    env.context_w = 64;
    let base = RlCfg {
        env,
        level: Level::Easy,
        encoder: enc,
        policy: PolicyCfg::desk(),
        sac: SacCfg { lr: 3e-4, alpha_lr: 3e-4, ..SacCfg::default() },
        replay_capacity: 20_000,
        batch: 32,
        steps: rl_steps,
        warmup: 1_000,
        train_maps: 500,
        eval_every: 0,
        eval_episodes: episodes,
        seed,
        ..RlCfg::default()
    };
    let train = |name: &str, ckpt: Option<&Path>| -> Result<(f64, f64, f64)> {
        let t1 = Instant::now();
        let cfg = RlCfg { encoder_ckpt: ckpt.map(Path::to_path_buf), ..base.clone() };
        let mut tr = RlTrainer::new(cfg)?;
        tr.run(|t, _| {
            if t.env_steps % 1_000 == 0 {
                eprintln!("  e2e {name} decision {} ({:.0} s)", t.env_steps, t1.elapsed().as_secs_f64());
            }
        })?;
        tr.save(&out.join(format!("agent_{name}.ckpt")))?;
        let m = tr.evaluate(episodes, 1)?;
        Ok((m.sr, m.spl, t1.elapsed().as_secs_f64()))
    };
    let (sr_pre, spl_pre, secs_pre) = train("pretrained", Some(&enc_ckpt))?;
    let (sr_rand, spl_rand, secs_rand) = train("random", None)?;
    let spec = DifficultySpec::for_level(Level::Easy);
    let recs = evaluate(&spec, &base.env, episodes, seed, 1, &|_| Box::new(NearestFrontierActor))?;
    let frontier = compute_sr_spl(&recs)?;

    let summary = format!(
        "{rl_steps} decisions per arm, pretrain {pt_steps} steps ({pt_secs:.0} s, loss drop {}); \
         pretrained SR {sr_pre:.1} SPL {spl_pre:.1} ({secs_pre:.0} s); random-encoder SR {sr_rand:.1} \
         SPL {spl_rand:.1} ({secs_rand:.0} s); nearest-frontier SR {:.1} SPL {:.1}; margins vs frontier \
         {:+.1}, vs random encoder {:+.1}",
        pt_drop.join(" "),
        frontier.sr,
        frontier.spl,
        sr_pre - frontier.sr,
        sr_pre - sr_rand
    );
    std::fs::write(out.join("summary.txt"), format!("{summary}\n"))?;
    Ok((sr_pre > frontier.sr && sr_pre > sr_rand, summary))
}

// ---------- determinism ----------

fn cli(args: &[&str]) -> i32 {
    macronav::cli::dispatch(std::iter::once("macronav").chain(args.iter().copied()))
}

/// CSV text with the named column dropped.
fn csv_without(path: &Path, column: &str) -> Result<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let skip = headers.iter().position(|h| h == column);
    let keep = |rec: &csv::StringRecord| -> Vec<String> {
        rec.iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(_, v)| v.to_string())
            .collect()
    };
    let mut rows = vec![keep(&headers)];
    for rec in r.records() {
        rows.push(keep(&rec?));
    }
    Ok(rows)
}

fn determinism() -> Result<(bool, String)> {
    let dir = tempfile::tempdir()?;
    let p = |name: &str| dir.path().join(name).display().to_string();
    let mut diffs = Vec::new();
    let mut same = |a: &str, b: &str, file: &str| -> Result<()> {
        let (x, y) = (dir.path().join(a).join(file), dir.path().join(b).join(file));
        let equal = if file.ends_with(".csv") {
            csv_without(&x, "wall_ms")? == csv_without(&y, "wall_ms")?
        } else {
            std::fs::read(&x).with_context(|| x.display().to_string())? == std::fs::read(&y)?
        };
        if !equal {
            diffs.push(format!("{a}/{file} != {b}/{file}"));
        }
        Ok(())
    };

    let enc = [
        "--set", "d=16", "--set", "layers=1", "--set", "heads=2", "--set", "context_size=32",
        "--set", "dec_dim=16", "--set", "dec_layers=1", "--set", "dec_heads=2",
    ];
    for name in ["pt_a", "pt_b"] {
        let out = p(name);
        let mut args = vec![
            "pretrain", "--steps", "12", "--seed", "3", "--out", &out, "--set", "mix=rooms:1",
            "--set", "maps_per_source=3", "--set", "source_map_size=48", "--set", "batch=2",
            "--set", "lr=1e-3", "--set", "log_every=0",
        ];
        args.extend_from_slice(&enc);
        ensure!(cli(&args) == 0, "pretrain {name} failed");
    }
    same("pt_a", "pt_b", "encoder.ckpt")?;
    same("pt_a", "pt_b", "pretrain_log.csv")?;

    let ckpt = format!("{}/encoder.ckpt", p("pt_a"));
    for name in ["rl_a", "rl_b"] {
        let out = p(name);
        let args = [
            "train-rl", "--encoder-ckpt", &ckpt, "--steps", "16", "--seed", "4", "--out", &out,
            "--set", "d_model=8", "--set", "policy_layers=1", "--set", "policy_heads=2",
            "--set", "lstm_dim=8", "--set", "batch=4", "--set", "warmup=6",
            "--set", "replay_capacity=64", "--set", "train_maps=3", "--set", "lr=1e-3",
            "--set", "k_nodes=8", "--set", "max_steps=6", "--set", "log_every=0",
        ];
        ensure!(cli(&args) == 0, "train-rl {name} failed");
    }
    same("rl_a", "rl_b", "agent.ckpt")?;
    same("rl_a", "rl_b", "train_episodes.csv")?;
    let episodes = csv_without(&dir.path().join("rl_a/train_episodes.csv"), "")?.len() - 1;
    ensure!(episodes >= 2, "train-rl finished only {episodes} episodes");

    let agent = format!("{}/agent.ckpt", p("rl_a"));
    for (name, workers) in [("ev_a", "1"), ("ev_b", "2")] {
        let out = p(name);
        let args = [
            "eval", "--actor", "policy", "--checkpoint", &agent, "--episodes", "6", "--workers",
            workers, "--seed", "5", "--out", &out, "--set", "k_nodes=8", "--set", "max_overlays=0",
        ];
        ensure!(cli(&args) == 0, "eval {name} failed");
    }
    same("ev_a", "ev_b", "episodes.csv")?;
    same("ev_a", "ev_b", "summary.csv")?;

    Ok((
        diffs.is_empty(),
        if diffs.is_empty() {
            "pretrain, train-rl and eval repeated with the same config and seed: checkpoints and CSVs \
             identical (wall_ms excluded, eval on 1 vs 2 workers)"
                .into()
        } else {
            diffs.join("; ")
        },
    ))
}

