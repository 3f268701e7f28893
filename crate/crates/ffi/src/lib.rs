//! C ABI over the navigation environment and the mask generators.
//!
//! Every function returns an [`MnavStatus`]; on failure the message is kept per
//! thread and read with [`mnav_last_error`]. Arrays are caller-owned, row-major
//! `float` / `int32_t` buffers whose required sizes come from
//! [`mnav_env_shape`]. A handle must not be used from two threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use macronav::evalkit::{DifficultySpec, Level, Split};
use macronav::gridmap::{load_map, Pose};
use macronav::maskgen::{fov_mask, mae_mask, spm_mask, MaskSpec};
use macronav::navenv::{NavEnv, NavEnvCfg, Observation, Outcome, NODE_FEATURES};
use macronav::rng::seeded;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnavStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Closed handle, no episode yet, or stepping a finished episode.
    InvalidState = 4,
    BufferTooSmall = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnavMaskKind {
    Spm = 0,
    Fov = 1,
    Mae = 2,
}

/// Episode outcome codes written by [`mnav_env_step`].
pub const MNAV_OUTCOME_RUNNING: i32 = 0;
pub const MNAV_OUTCOME_SUCCESS: i32 = 1;
pub const MNAV_OUTCOME_TIMEOUT: i32 = 2;
pub const MNAV_OUTCOME_STUCK: i32 = 3;

/// Environment settings that cross the boundary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MnavEnvConfig {
    pub k_nodes: u32,
    pub r_local_m: f64,
    pub knn: u32,
    pub context_size: u32,
    pub patch: u32,
    pub max_steps: u32,
    pub success_radius_m: f64,
    pub sensor_range_m: f64,
    pub sensor_rays: u32,
    pub r_goal: f64,
    pub lambda_s: f64,
    pub lambda_h: f64,
}

impl MnavEnvConfig {
    fn to_native(self) -> NavEnvCfg {
        let mut c = NavEnvCfg {
            k_nodes: self.k_nodes as usize,
            r_local_m: self.r_local_m,
            knn: self.knn as usize,
            context_h: self.context_size as usize,
            context_w: self.context_size as usize,
            patch: self.patch as usize,
            max_steps: self.max_steps as usize,
            success_radius_m: self.success_radius_m,
            ..NavEnvCfg::default()
        };
        c.sensor.range_m = self.sensor_range_m;
        c.sensor.n_rays = self.sensor_rays as usize;
        c.reward.r_goal = self.r_goal;
        c.reward.lambda_s = self.lambda_s;
        c.reward.lambda_h = self.lambda_h;
        c
    }

    fn from_native(c: &NavEnvCfg) -> Self {
        Self {
            k_nodes: c.k_nodes as u32,
            r_local_m: c.r_local_m,
            knn: c.knn as u32,
            context_size: c.context_h as u32,
            patch: c.patch as u32,
            max_steps: c.max_steps as u32,
            success_radius_m: c.success_radius_m,
            sensor_range_m: c.sensor.range_m,
            sensor_rays: c.sensor.n_rays as u32,
            r_goal: c.reward.r_goal,
            lambda_s: c.reward.lambda_s,
            lambda_h: c.reward.lambda_h,
        }
    }
}

/// Opaque environment handle.
pub struct MnavEnv {
    cfg: NavEnvCfg,
    env: Option<NavEnv>,
    closed: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("interior NULs removed"));
}

type FfiResult = Result<(), (MnavStatus, String)>;

fn fail<T>(status: MnavStatus, msg: impl Into<String>) -> Result<T, (MnavStatus, String)> {
    Err((status, msg.into()))
}

/// Runs `f`, turning errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> FfiResult) -> MnavStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MnavStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MnavStatus::Internal
        }
    }
}

fn outcome_code(o: Outcome) -> i32 {
    match o {
        Outcome::Running => MNAV_OUTCOME_RUNNING,
        Outcome::Success => MNAV_OUTCOME_SUCCESS,
        Outcome::Timeout => MNAV_OUTCOME_TIMEOUT,
        Outcome::Stuck => MNAV_OUTCOME_STUCK,
    }
}

/// # Safety
/// `h` is null or a live pointer from [`mnav_env_new`].
unsafe fn handle<'a>(h: *mut MnavEnv) -> Result<&'a mut MnavEnv, (MnavStatus, String)> {
    match h.as_mut() {
        None => fail(MnavStatus::NullPointer, "null environment handle"),
        Some(e) if e.closed => fail(MnavStatus::InvalidState, "environment handle is closed"),
        Some(e) => Ok(e),
    }
}

/// # Safety
/// `ptr` is null or valid for `len` writes.
unsafe fn out_slice<'a, T>(ptr: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], (MnavStatus, String)> {
    if need == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return fail(MnavStatus::NullPointer, format!("null {what} buffer"));
    }
    if len < need {
        return fail(MnavStatus::BufferTooSmall, format!("{what} buffer holds {len}, need {need}"));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, need))
}

/// # Safety
/// `ptr` is null or valid for one write.
unsafe fn write_out<T>(ptr: *mut T, v: T) {
    if let Some(p) = ptr.as_mut() {
        *p = v;
    }
}

/// Native crate version, NUL terminated, static.
#[no_mangle]
pub extern "C" fn mnav_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mnav_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn mnav_env_config_default() -> MnavEnvConfig {
    MnavEnvConfig::from_native(&NavEnvCfg::default())
}

/// Creates a handle. Free it with [`mnav_env_free`].
///
/// # Safety
/// `cfg` is null (defaults) or points to a valid config; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mnav_env_new(cfg: *const MnavEnvConfig, out: *mut *mut MnavEnv) -> MnavStatus {
    guard(|| {
        if out.is_null() {
            return fail(MnavStatus::NullPointer, "null output handle");
        }
        let cfg = cfg.as_ref().map(|c| c.to_native()).unwrap_or_default();
        cfg.validate()
            .or_else(|e| fail(MnavStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(MnavEnv {
            cfg,
            env: None,
            closed: false,
        }));
        Ok(())
    })
}

/// Starts an episode on the map file `map_path` (PGM plus optional sidecar)
/// between two metric poses.
///
/// # Safety
/// `h` comes from [`mnav_env_new`]; `map_path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mnav_env_reset_map(
    h: *mut MnavEnv,
    map_path: *const c_char,
    start_x: f64,
    start_y: f64,
    goal_x: f64,
    goal_y: f64,
    seed: u64,
) -> MnavStatus {
    guard(|| {
        let e = handle(h)?;
        if map_path.is_null() {
            return fail(MnavStatus::NullPointer, "null map path");
        }
        let path = CStr::from_ptr(map_path)
            .to_str()
            .or_else(|_| fail(MnavStatus::InvalidArgument, "map path is not UTF-8"))?;
        let map = load_map(Path::new(path)).or_else(|err| fail(MnavStatus::Io, format!("{path}: {err}")))?;
        e.env = None;
        let env = NavEnv::reset(
            e.cfg,
            Arc::new(map),
            Pose::new(start_x, start_y),
            Pose::new(goal_x, goal_y),
            seed,
        )
        .or_else(|err| fail(MnavStatus::InvalidArgument, err.to_string()))?;
        e.env = Some(env);
        Ok(())
    })
}

/// Starts generated episode `episode` of difficulty `level` (0 easy, 1 medium,
/// 2 hard) from the train (0) or test (1) split, exactly as the native
/// evaluation does for the same `seed`.
///
/// # Safety
/// `h` comes from [`mnav_env_new`].
#[no_mangle]
pub unsafe extern "C" fn mnav_env_reset_level(
    h: *mut MnavEnv,
    level: u32,
    split: u32,
    episode: u64,
    seed: u64,
) -> MnavStatus {
    guard(|| {
        let e = handle(h)?;
        let level = *Level::ALL
            .get(level as usize)
            .ok_or((MnavStatus::InvalidArgument, format!("unknown level {level}")))?;
        let split = match split {
            0 => Split::Train,
            1 => Split::Test,
            s => return fail(MnavStatus::InvalidArgument, format!("unknown split {s}")),
        };
        let ep = DifficultySpec::for_level(level)
            .episode(seed, split, episode as usize)
            .or_else(|err| fail(MnavStatus::InvalidArgument, err.to_string()))?;
        e.env = None;
        let env = NavEnv::reset(e.cfg, ep.map, ep.start, ep.goal, ep.env_seed)
            .or_else(|err| fail(MnavStatus::InvalidArgument, err.to_string()))?;
        e.env = Some(env);
        Ok(())
    })
}

/// Buffer sizes: the context is `context_h * context_w` floats, node features
/// `k_nodes * node_features` floats and the node mask `k_nodes` ints.
///
/// # Safety
/// `h` comes from [`mnav_env_new`]; each output pointer is null or writable.
#[no_mangle]
pub unsafe extern "C" fn mnav_env_shape(
    h: *mut MnavEnv,
    context_h: *mut u32,
    context_w: *mut u32,
    k_nodes: *mut u32,
    node_features: *mut u32,
) -> MnavStatus {
    guard(|| {
        let e = handle(h)?;
        write_out(context_h, e.cfg.context_h as u32);
        write_out(context_w, e.cfg.context_w as u32);
        write_out(k_nodes, e.cfg.k_nodes as u32);
        write_out(node_features, NODE_FEATURES as u32);
        Ok(())
    })
}

fn fill_observation(
    obs: &Observation,
    k: usize,
    context: &mut [f32],
    nodes: &mut [f32],
    mask: &mut [i32],
) -> usize {
    context.copy_from_slice(obs.context.data());
    let feats = obs.graph.feature_matrix();
    let n = feats.len() / NODE_FEATURES;
    nodes.fill(0.0);
    nodes[..feats.len()].copy_from_slice(&feats);
    for (i, m) in mask.iter_mut().enumerate().take(k) {
        *m = i32::from(i < n);
    }
    n
}

/// Copies the current observation. Node rows beyond the node count are zero
/// and masked out.
///
/// # Safety
/// `h` comes from [`mnav_env_new`]; buffers are valid for their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn mnav_env_observation(
    h: *mut MnavEnv,
    context: *mut f32,
    context_len: usize,
    nodes: *mut f32,
    nodes_len: usize,
    node_mask: *mut i32,
    node_mask_len: usize,
    n_nodes: *mut u32,
) -> MnavStatus {
    guard(|| {
        let e = handle(h)?;
        let k = e.cfg.k_nodes;
        let ctx = out_slice(context, context_len, e.cfg.context_h * e.cfg.context_w, "context")?;
        let nd = out_slice(nodes, nodes_len, k * NODE_FEATURES, "node")?;
        let mk = out_slice(node_mask, node_mask_len, k, "node mask")?;
        let env = e
            .env
            .as_ref()
            .ok_or((MnavStatus::InvalidState, "no episode; call a reset first".to_string()))?;
        let n = fill_observation(env.observation(), k, ctx, nd, mk);
        write_out(n_nodes, n as u32);
        Ok(())
    })
}

/// Moves to candidate node `action`.
///
/// # Safety
/// `h` comes from [`mnav_env_new`]; output pointers are null or writable.
#[no_mangle]
pub unsafe extern "C" fn mnav_env_step(
    h: *mut MnavEnv,
    action: i32,
    reward: *mut f64,
    done: *mut i32,
    outcome: *mut i32,
) -> MnavStatus {
    guard(|| {
        let e = handle(h)?;
        let env = e
            .env
            .as_mut()
            .ok_or((MnavStatus::InvalidState, "no episode; call a reset first".to_string()))?;
        if env.is_done() {
            return fail(MnavStatus::InvalidState, "episode already finished");
        }
        if action < 0 {
            return fail(MnavStatus::InvalidArgument, format!("negative action {action}"));
        }
        let r = env
            .step(action as usize)
            .or_else(|err| fail(MnavStatus::InvalidArgument, err.to_string()))?;
        write_out(reward, r.reward);
        write_out(done, i32::from(r.done));
        write_out(outcome, outcome_code(r.outcome));
        Ok(())
    })
}

/// Agent pose in metres and steps taken so far.
///
/// # Safety
/// `h` comes from [`mnav_env_new`]; output pointers are null or writable.
#[no_mangle]
pub unsafe extern "C" fn mnav_env_pose(h: *mut MnavEnv, x: *mut f64, y: *mut f64, steps: *mut u32) -> MnavStatus {
    guard(|| {
        let e = handle(h)?;
        let env = e
            .env
            .as_ref()
            .ok_or((MnavStatus::InvalidState, "no episode; call a reset first".to_string()))?;
        let p = env.observation().pose;
        write_out(x, p.x);
        write_out(y, p.y);
        write_out(steps, env.steps() as u32);
        Ok(())
    })
}

/// Releases the native environment. Later calls on the handle fail with
/// `InvalidState`; the handle itself still needs [`mnav_env_free`].
///
/// # Safety
/// `h` comes from [`mnav_env_new`].
#[no_mangle]
pub unsafe extern "C" fn mnav_env_close(h: *mut MnavEnv) -> MnavStatus {
    guard(|| {
        let e = handle(h)?;
        e.env = None;
        e.closed = true;
        Ok(())
    })
}

/// # Safety
/// `h` is null or comes from [`mnav_env_new`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mnav_env_free(h: *mut MnavEnv) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Draws one mask over a `grid_h x grid_w` patch grid with the native
/// generator seeded by `seed`, writing the sorted masked indices.
/// `p0` / `p1`: SPM rho and smoothness, FOV rho_fov and rho_expand, MAE ratio
/// (p1 unused).
///
/// # Safety
/// `out` is valid for `out_len` writes; `n_out` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn mnav_mask(
    kind: MnavMaskKind,
    grid_h: u32,
    grid_w: u32,
    p0: f64,
    p1: f64,
    seed: u64,
    out: *mut i32,
    out_len: usize,
    n_out: *mut usize,
) -> MnavStatus {
    guard(|| {
        let grid = (grid_h as usize, grid_w as usize);
        let mut rng = seeded(seed);
        let m: MaskSpec = match kind {
            MnavMaskKind::Spm => spm_mask(grid, p0, p1, &mut rng),
            MnavMaskKind::Fov => fov_mask(grid, p0, p1, &mut rng),
            MnavMaskKind::Mae => mae_mask(grid, p0, &mut rng),
        }
        .or_else(|err| fail(MnavStatus::InvalidArgument, err.to_string()))?;
        write_out(n_out, m.masked.len());
        let dst = out_slice(out, out_len, m.masked.len(), "mask")?;
        for (d, s) in dst.iter_mut().zip(&m.masked) {
            *d = *s as i32;
        }
        Ok(())
    })
}
