use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::runner::EpisodeRecord;
use super::{compute_sr_spl, EvalError};
use crate::gridmap::{write_pgm, Cell, CellPos, OccupancyGrid, PGM_FREE, PGM_OCCUPIED};
use crate::navenv::Outcome;

/// Gray levels of trajectory overlays.
const PATH_GRAY: u8 = 128;
const ENDPOINT_GRAY: u8 = 64;

/// One line of `episodes.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub episode_id: usize,
    pub level: String,
    pub outcome: Outcome,
    pub steps: usize,
    pub p_m: f64,
    pub lstar_m: f64,
    pub spl_term: f64,
    pub reward_sum: f64,
    pub wall_ms: f64,
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub level: String,
    pub episodes: usize,
    pub successes: usize,
    pub sr: f64,
    pub spl: f64,
    pub mean_steps: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub episodes_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub overlays: Vec<PathBuf>,
    pub summary: Vec<SummaryRow>,
}

/// Map with the trajectory drawn in mid gray and its two ends darker.
pub fn overlay_pixels(map: &OccupancyGrid, trajectory: &[CellPos]) -> Vec<u8> {
    let mut px: Vec<u8> = map
        .cells()
        .iter()
        .map(|c| if *c == Cell::Free { PGM_FREE } else { PGM_OCCUPIED })
        .collect();
    let g = map.geometry();
    for c in trajectory {
        px[g.index(*c)] = PATH_GRAY;
    }
    for c in trajectory.first().into_iter().chain(trajectory.last()) {
        px[g.index(*c)] = ENDPOINT_GRAY;
    }
    px
}

/// Writes `episodes.csv`, `summary.csv` (one row per level plus `all`) and, for
/// the first `max_overlays` episodes carrying a map, `overlays/episode_<id>.pgm`.
pub fn emit_report(
    records: &[EpisodeRecord],
    out_dir: &Path,
    max_overlays: usize,
) -> Result<ReportFiles, EvalError> {
    fs::create_dir_all(out_dir)?;
    let episodes_csv = out_dir.join("episodes.csv");
    let mut w = csv::Writer::from_path(&episodes_csv)?;
    for r in records {
        w.serialize(CsvRow {
            episode_id: r.episode_id,
            level: r.level.clone(),
            outcome: r.outcome,
            steps: r.steps,
            p_m: r.p_m,
            lstar_m: r.lstar_m,
            spl_term: r.spl_term(),
            reward_sum: r.reward_sum,
            wall_ms: r.wall_ms,
        })?;
    }
    w.flush()?;

    let mut groups: BTreeMap<&str, Vec<EpisodeRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.level.as_str()).or_default().push(r.clone());
    }
    let mut summary = Vec::new();
    let mut push = |level: &str, rs: &[EpisodeRecord]| -> Result<(), EvalError> {
        let m = compute_sr_spl(rs)?;
        let n = rs.len() as f64;
        summary.push(SummaryRow {
            level: level.to_string(),
            episodes: rs.len(),
            successes: rs.iter().filter(|r| r.outcome == Outcome::Success).count(),
            sr: m.sr,
            spl: m.spl,
            mean_steps: rs.iter().map(|r| r.steps as f64).sum::<f64>() / n,
            mean_reward: rs.iter().map(|r| r.reward_sum).sum::<f64>() / n,
        });
        Ok(())
    };
    for (level, rs) in &groups {
        push(level, rs)?;
    }
    if !records.is_empty() {
        push("all", records)?;
    }
    let summary_csv = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_csv)?;
    for row in &summary {
        w.serialize(row)?;
    }
    w.flush()?;

    let mut overlays = Vec::new();
    let with_maps = records.iter().filter_map(|r| r.map.as_ref().map(|m| (r, m)));
    for (r, map) in with_maps.take(max_overlays) {
        let dir = out_dir.join("overlays");
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("episode_{:04}.pgm", r.episode_id));
        write_pgm(&path, map.width(), map.height(), &overlay_pixels(map, &r.trajectory))?;
        overlays.push(path);
    }
    Ok(ReportFiles {
        episodes_csv,
        summary_csv,
        overlays,
        summary,
    })
}

pub fn read_episodes_csv(path: &Path) -> Result<Vec<CsvRow>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
