//! Binary PGM (P5) maps with a `key=value` sidecar (`<stem>.meta`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{BeliefMap, Cell, GridError, OccupancyGrid};

pub const PGM_FREE: u8 = 255;
pub const PGM_OCCUPIED: u8 = 0;
pub const PGM_UNKNOWN: u8 = 128;
/// Imported pixels at or above this level count as FREE.
pub const FREE_THRESHOLD: u8 = 192;
pub const META_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapMeta {
    pub resolution_m: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

impl Default for MapMeta {
    fn default() -> Self {
        Self {
            resolution_m: 0.1,
            origin_x: 0.0,
            origin_y: 0.0,
        }
    }
}

pub fn meta_path(map_path: &Path) -> PathBuf {
    map_path.with_extension("meta")
}

/// Writes an 8-bit P5 image, row 0 first.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), GridError> {
    if pixels.len() != width * height {
        return Err(GridError::Argument(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut buf = Vec::with_capacity(pixels.len() + 32);
    write!(buf, "P5\n{width} {height}\n255\n")?;
    buf.extend_from_slice(pixels);
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a P5 image, rescaling samples to 0..=255.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), GridError> {
    let bytes = fs::read(path)?;
    parse_pgm(&bytes)
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), GridError> {
    let bad = |m: &str| GridError::Format(format!("pgm: {m}"));
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("bad magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(bad("missing raster separator"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("bad dimensions or maxval"));
    }
    let sample = if maxval < 256 { 1 } else { 2 };
    let need = width * height * sample;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated raster"))?;
    let pixels = if sample == 1 {
        raster
            .iter()
            .map(|&v| ((v as usize).min(maxval) * 255 / maxval) as u8)
            .collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|p| {
                let v = (u16::from_be_bytes([p[0], p[1]]) as usize).min(maxval);
                (v * 255 / maxval) as u8
            })
            .collect()
    };
    Ok((width, height, pixels))
}

fn write_meta(path: &Path, meta: &MapMeta) -> Result<(), GridError> {
    let text = format!(
        "format_version={META_VERSION}\nresolution_m={}\norigin_x={}\norigin_y={}\n",
        meta.resolution_m, meta.origin_x, meta.origin_y
    );
    fs::write(meta_path(path), text)?;
    Ok(())
}

fn read_meta(path: &Path) -> Result<MapMeta, GridError> {
    let mp = meta_path(path);
    if !mp.exists() {
        return Ok(MapMeta::default());
    }
    let text = fs::read_to_string(&mp)?;
    let mut meta = MapMeta::default();
    let mut version = None;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| GridError::Format(format!("{}:{}: expected key=value", mp.display(), ln + 1)))?;
        let num = |v: &str| -> Result<f64, GridError> {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| GridError::Format(format!("{}: bad value for {k}", mp.display())))
        };
        match k.trim() {
            "format_version" => version = Some(num(v)? as u32),
            "resolution_m" => meta.resolution_m = num(v)?,
            "origin_x" => meta.origin_x = num(v)?,
            "origin_y" => meta.origin_y = num(v)?,
            other => {
                return Err(GridError::Format(format!("{}: unknown key {other}", mp.display())))
            }
        }
    }
    match version {
        Some(META_VERSION) => {}
        Some(v) => return Err(GridError::Format(format!("unsupported map format_version {v}"))),
        None => return Err(GridError::Format("map metadata lacks format_version".into())),
    }
    if meta.resolution_m <= 0.0 {
        return Err(GridError::Format("resolution_m must be positive".into()));
    }
    Ok(meta)
}

pub fn save_map(path: &Path, grid: &OccupancyGrid) -> Result<(), GridError> {
    let pixels: Vec<u8> = grid
        .cells()
        .iter()
        .map(|c| if *c == Cell::Free { PGM_FREE } else { PGM_OCCUPIED })
        .collect();
    write_pgm(path, grid.width(), grid.height(), &pixels)?;
    let g = grid.geometry();
    write_meta(
        path,
        &MapMeta {
            resolution_m: g.resolution,
            origin_x: g.origin.0,
            origin_y: g.origin.1,
        },
    )
}

/// Loads a ground-truth map. Pixels below [`FREE_THRESHOLD`] (including the
/// unknown gray) become OCCUPIED and the outer ring is forced OCCUPIED, so any
/// grayscale floor plan imports as a closed world. A missing sidecar means
/// default metadata.
pub fn load_map(path: &Path) -> Result<OccupancyGrid, GridError> {
    let (w, h, pixels) = read_pgm(path)?;
    let meta = read_meta(path)?;
    if w < 3 || h < 3 {
        return Err(GridError::Format(format!("map {w}x{h} too small")));
    }
    let mut cells: Vec<Cell> = pixels
        .iter()
        .map(|&p| if p >= FREE_THRESHOLD { Cell::Free } else { Cell::Occupied })
        .collect();
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                cells[y * w + x] = Cell::Occupied;
            }
        }
    }
    Ok(OccupancyGrid::new(w, h, meta.resolution_m, cells)?.with_origin((meta.origin_x, meta.origin_y)))
}

pub fn save_belief_pgm(path: &Path, belief: &BeliefMap) -> Result<(), GridError> {
    let pixels: Vec<u8> = belief
        .cells()
        .iter()
        .map(|c| match c {
            Cell::Free => PGM_FREE,
            Cell::Occupied => PGM_OCCUPIED,
            Cell::Unknown => PGM_UNKNOWN,
        })
        .collect();
    write_pgm(path, belief.width(), belief.height(), &pixels)
}
