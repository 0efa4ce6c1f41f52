//! Marching-squares level curves of a nodal field.

use super::StreamFieldGrid;
use crate::flowfield::PlanarPoint;
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq)]
pub struct ContourLine {
    pub level: f64,
    pub points: Vec<PlanarPoint>,
}

type EdgeId = usize;

// Horizontal edge (r,c)-(r,c+1) -> 2·idx, vertical edge (r,c)-(r+1,c) -> 2·idx+1.
fn horizontal(nx: usize, r: usize, c: usize) -> EdgeId {
    2 * (r * nx + c)
}

fn vertical(nx: usize, r: usize, c: usize) -> EdgeId {
    2 * (r * nx + c) + 1
}

/// Polylines of `Ψ = level` for each requested level. Cell saddles are
/// disambiguated with the cell-average value.
pub fn contour_polylines(field: &StreamFieldGrid, levels: &[f64]) -> Vec<ContourLine> {
    let g = *field.grid();
    let (dx, dy) = (g.dx(), g.dy());
    let crossing = |level: f64, edge: EdgeId| -> PlanarPoint {
        let base = edge / 2;
        let (r, c) = g.row_col(base);
        let (r2, c2) = if edge.is_multiple_of(2) { (r, c + 1) } else { (r + 1, c) };
        let (a, b) = (field.node_psi(r, c), field.node_psi(r2, c2));
        let t = if b == a { 0.5 } else { (level - a) / (b - a) };
        let p0 = g.node_position(r, c);
        if edge.is_multiple_of(2) {
            PlanarPoint::new(p0.x + t * dx, p0.y)
        } else {
            PlanarPoint::new(p0.x, p0.y + t * dy)
        }
    };

    let mut out = Vec::new();
    for &level in levels {
        let mut segments: Vec<(EdgeId, EdgeId)> = Vec::new();
        for r in 0..g.ny - 1 {
            for c in 0..g.nx - 1 {
                let v = [
                    field.node_psi(r, c),
                    field.node_psi(r, c + 1),
                    field.node_psi(r + 1, c + 1),
                    field.node_psi(r + 1, c),
                ];
                let code = v
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &x)| acc | (((x > level) as u8) << i));
                // Edges in corner order: bottom, right, top, left.
                let e = [
                    horizontal(g.nx, r, c),
                    vertical(g.nx, r, c + 1),
                    horizontal(g.nx, r + 1, c),
                    vertical(g.nx, r, c),
                ];
                let centre_above = v.iter().sum::<f64>() / 4.0 > level;
                match code {
                    0 | 15 => {}
                    1 | 14 => segments.push((e[3], e[0])),
                    2 | 13 => segments.push((e[0], e[1])),
                    3 | 12 => segments.push((e[3], e[1])),
                    4 | 11 => segments.push((e[1], e[2])),
                    6 | 9 => segments.push((e[0], e[2])),
                    7 | 8 => segments.push((e[3], e[2])),
                    5 | 10 => {
                        // Corners 0 and 2 on one side, 1 and 3 on the other.
                        let diagonal_02_connected = (code == 5) == centre_above;
                        if diagonal_02_connected {
                            segments.push((e[3], e[2]));
                            segments.push((e[0], e[1]));
                        } else {
                            segments.push((e[3], e[0]));
                            segments.push((e[1], e[2]));
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }
        for chain in chain_segments(&segments) {
            out.push(ContourLine {
                level,
                points: chain.into_iter().map(|e| crossing(level, e)).collect(),
            });
        }
    }
    out
}

fn chain_segments(segments: &[(EdgeId, EdgeId)]) -> Vec<Vec<EdgeId>> {
    let mut by_edge: HashMap<EdgeId, Vec<usize>> = HashMap::new();
    for (i, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(i);
        by_edge.entry(*b).or_default().push(i);
    }
    let mut used = vec![false; segments.len()];
    let mut chains = Vec::new();

    let extend = |chain: &mut Vec<EdgeId>, used: &mut Vec<bool>| loop {
        let tail = *chain.last().unwrap();
        let next = by_edge[&tail].iter().copied().find(|&s| !used[s]);
        match next {
            Some(s) => {
                used[s] = true;
                let (a, b) = segments[s];
                chain.push(if a == tail { b } else { a });
            }
            None => break,
        }
    };

    // Open chains start at edges touched once, so each polyline is emitted
    // whole; closed loops are picked up afterwards.
    let mut starts: Vec<usize> = (0..segments.len())
        .filter(|&i| by_edge[&segments[i].0].len() == 1 || by_edge[&segments[i].1].len() == 1)
        .collect();
    starts.extend(0..segments.len());
    for s in starts {
        if used[s] {
            continue;
        }
        used[s] = true;
        let (a, b) = segments[s];
        let (first, second) = if by_edge[&b].len() == 1 { (b, a) } else { (a, b) };
        let mut chain = vec![first, second];
        extend(&mut chain, &mut used);
        chains.push(chain);
    }
    chains
}
