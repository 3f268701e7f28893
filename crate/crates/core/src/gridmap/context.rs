use super::{BeliefMap, Cell, GridError, Pose};

pub const FREE_VALUE: f32 = 1.0;
pub const OCCUPIED_VALUE: f32 = 0.0;
pub const UNKNOWN_VALUE: f32 = 0.5;

pub fn encode_cell(c: Cell) -> f32 {
    match c {
        Cell::Free => FREE_VALUE,
        Cell::Occupied => OCCUPIED_VALUE,
        Cell::Unknown => UNKNOWN_VALUE,
    }
}

/// Agent-centric crop; the agent cell sits at row `height / 2`, column `width / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ContextMap {
    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self, GridError> {
        if data.len() != height * width {
            return Err(GridError::Argument(format!(
                "{} values for a {height}x{width} context",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, v: f32) -> Self {
        Self {
            height,
            width,
            data: vec![v; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    /// Compact form: 0 occupied, 1 unknown, 2 free. Only valid for un-augmented maps.
    pub fn to_codes(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 2.0).round() as u8).collect()
    }

    pub fn from_codes(height: usize, width: usize, codes: &[u8]) -> Result<Self, GridError> {
        Self::from_vec(height, width, codes.iter().map(|c| *c as f32 * 0.5).collect())
    }

    /// Grayscale rendering (free white, unknown gray, occupied black).
    pub fn to_gray(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

/// Axis-aligned `height x width` crop of the encoded belief centered on the agent
/// cell. Cells outside the grid read as UNKNOWN.
pub fn crop_context(
    belief: &BeliefMap,
    pose: Pose,
    height: usize,
    width: usize,
    patch: usize,
) -> Result<ContextMap, GridError> {
    if patch == 0 || height % patch != 0 || width % patch != 0 || height == 0 || width == 0 {
        return Err(GridError::Argument(format!(
            "context {height}x{width} not divisible by patch {patch}"
        )));
    }
    let agent = belief
        .geometry()
        .cell_of(pose)
        .ok_or_else(|| GridError::Argument("pose outside grid".into()))?;
    let oy = agent.y as isize - (height / 2) as isize;
    let ox = agent.x as isize - (width / 2) as isize;
    let mut data = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            data.push(encode_cell(belief.get_signed(ox + c as isize, oy + r as isize)));
        }
    }
    Ok(ContextMap {
        height,
        width,
        data,
    })
}
