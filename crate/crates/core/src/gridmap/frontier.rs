use super::{BeliefMap, Cell, CellPos, NEIGHBORS8};

/// FREE cell with at least one UNKNOWN 8-neighbor. Off-grid neighbors do not count.
pub fn is_frontier(belief: &BeliefMap, c: CellPos) -> bool {
    if belief.get(c) != Cell::Free {
        return false;
    }
    let g = belief.geometry();
    NEIGHBORS8.iter().any(|&(dx, dy)| {
        let (x, y) = (c.x as isize + dx, c.y as isize + dy);
        g.contains(x, y) && belief.get_signed(x, y) == Cell::Unknown
    })
}

/// All frontier cells in grid-index order.
pub fn detect_frontiers(belief: &BeliefMap) -> Vec<CellPos> {
    let g = *belief.geometry();
    (0..g.width * g.height)
        .map(|i| g.pos(i))
        .filter(|&c| is_frontier(belief, c))
        .collect()
}
