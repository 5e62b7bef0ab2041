//! 2D coordinate assignment for molecular graphs.
//!
//! Desk-grade structure layout: every ring becomes a regular polygon, acyclic
//! branches grow outward alternating ±60° (the classic zigzag), and a fixed
//! number of repulsion passes separates incidental collisions. The result is
//! deterministic — same graph, same coordinates — and intentionally modest:
//! heavily fused ring systems may still overlap, which is acceptable for
//! highlight figures.

use std::collections::VecDeque;

use crate::smiles::{BondOrder, MolecularGraph};

use super::RenderError;

/// Target bond length in layout units.
const BOND_LENGTH: f64 = 1.0;
/// Zigzag turn applied at each chain step.
const CHAIN_TURN: f64 = std::f64::consts::FRAC_PI_3;
/// Atom pairs closer than this are pushed apart during relaxation.
const MIN_SEPARATION: f64 = 0.7;
/// Relaxation passes; fixed so output never depends on convergence checks.
const RELAX_ITERATIONS: usize = 50;
/// Layout is rated for desk-scale molecules only.
const MAX_ATOMS: usize = 100;

/// A molecule with assigned 2D coordinates, ready to render.
#[derive(Debug, Clone)]
pub struct Depiction {
    /// One `(x, y)` per atom, in bond-length units; always finite.
    pub coordinates: Vec<(f64, f64)>,
    /// Glyph text per atom: element symbol plus charge suffix (`"N+"`,
    /// `"O-"`, `"Fe2+"`).
    pub labels: Vec<String>,
    /// Bond segments as `(atom, atom, order)`.
    pub bonds: Vec<(usize, usize, BondOrder)>,
    /// Highlight intensity per atom in `[0, 1]`; zero until assigned.
    pub highlights: Vec<f64>,
}

impl Depiction {
    /// Number of atoms.
    pub fn atom_count(&self) -> usize {
        self.coordinates.len()
    }

    /// Assign one highlight intensity per atom, clamped to `[0, 1]`.
    pub fn set_highlights(&mut self, values: &[f64]) -> Result<(), RenderError> {
        if values.len() != self.coordinates.len() {
            return Err(RenderError::AtomCountMismatch {
                atoms: self.coordinates.len(),
                weights: values.len(),
            });
        }
        self.highlights = values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(())
    }
}

/// Compute 2D coordinates for `graph`.
///
/// Rings are laid out as regular polygons with unit sides; acyclic runs
/// zigzag at ±60°; branch children fan out deterministically; 50 repulsion
/// passes then push non-ring atoms apart wherever two atoms sit closer than
/// 0.7 bond lengths. Errors on an empty or disconnected graph and on
/// molecules above 100 atoms.
pub fn layout(graph: &MolecularGraph) -> Result<Depiction, RenderError> {
    let n = graph.atom_count();
    if n == 0 {
        return Err(RenderError::Empty("molecular graph"));
    }
    if n > MAX_ATOMS {
        return Err(RenderError::TooManyAtoms(n));
    }

    let adjacency = adjacency(graph, n);
    check_connected(&adjacency)?;

    let rings = find_rings(graph, n);
    let mut ring_of = vec![None; n];
    for (r, ring) in rings.iter().enumerate() {
        for &atom in ring {
            if ring_of[atom].is_none() {
                ring_of[atom] = Some(r);
            }
        }
    }
    let in_ring: Vec<bool> = ring_of.iter().map(Option::is_some).collect();

    let mut pos: Vec<Option<(f64, f64)>> = vec![None; n];
    let mut ring_placed = vec![false; rings.len()];
    // (atom, unit direction it was entered along, tree depth)
    let mut queue: VecDeque<(usize, (f64, f64), usize)> = VecDeque::new();

    if let Some(r) = ring_of[0] {
        place_ring(&rings[r], &mut pos, None);
        ring_placed[r] = true;
        enqueue_ring_members(&rings[r], &pos, 1, &mut queue);
    } else {
        pos[0] = Some((0.0, 0.0));
        queue.push_back((0, (1.0, 0.0), 0));
    }

    while let Some((atom, incoming, depth)) = queue.pop_front() {
        let origin = pos[atom].expect("queued atoms are placed");
        let mut child = 0usize;
        for &next in &adjacency[atom] {
            if pos[next].is_some() {
                continue;
            }
            match ring_of[next] {
                Some(r) if !ring_placed[r] && placed_ring_edge(&rings[r], &pos).is_some() => {
                    // Fused ring: two of its atoms are already placed along a
                    // shared edge, so the polygon position is fully determined.
                    place_ring(&rings[r], &mut pos, None);
                    ring_placed[r] = true;
                    enqueue_ring_members(&rings[r], &pos, depth + 1, &mut queue);
                }
                Some(r) if !ring_placed[r] => {
                    let dir = chain_direction(incoming, depth, child);
                    child += 1;
                    pos[next] = Some((origin.0 + dir.0, origin.1 + dir.1));
                    place_ring(&rings[r], &mut pos, Some((next, dir)));
                    ring_placed[r] = true;
                    enqueue_ring_members(&rings[r], &pos, depth + 1, &mut queue);
                }
                _ => {
                    let dir = chain_direction(incoming, depth, child);
                    child += 1;
                    pos[next] = Some((origin.0 + dir.0, origin.1 + dir.1));
                    queue.push_back((next, dir, depth + 1));
                }
            }
        }
    }

    let mut coordinates: Vec<(f64, f64)> = pos
        .into_iter()
        .map(|p| p.expect("connected graph leaves no atom unplaced"))
        .collect();
    relax(&mut coordinates, &in_ring);
    assert!(
        coordinates.iter().all(|(x, y)| x.is_finite() && y.is_finite()),
        "layout arithmetic stays finite"
    );

    let labels = graph
        .atoms
        .iter()
        .map(|a| format!("{}{}", a.element, charge_suffix(a.charge)))
        .collect();
    let bonds = graph.bonds.iter().map(|b| (b.a, b.b, b.order)).collect();
    Ok(Depiction { coordinates, labels, bonds, highlights: vec![0.0; n] })
}

fn charge_suffix(charge: i32) -> String {
    match charge {
        0 => String::new(),
        1 => "+".to_string(),
        -1 => "-".to_string(),
        c if c > 0 => format!("{c}+"),
        c => format!("{}-", -c),
    }
}

fn adjacency(graph: &MolecularGraph, n: usize) -> Vec<Vec<usize>> {
    let mut adjacency = vec![Vec::new(); n];
    for bond in &graph.bonds {
        adjacency[bond.a].push(bond.b);
        adjacency[bond.b].push(bond.a);
    }
    adjacency
}

fn check_connected(adjacency: &[Vec<usize>]) -> Result<(), RenderError> {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(atom) = stack.pop() {
        for &next in &adjacency[atom] {
            if !seen[next] {
                seen[next] = true;
                stack.push(next);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(unreached) => Err(RenderError::Disconnected { unreached }),
        None => Ok(()),
    }
}

/// One ordered cycle per ring-closure bond: the tree path between the
/// closure's endpoints, so consecutive entries (and last-to-first) are
/// bonded.
fn find_rings(graph: &MolecularGraph, n: usize) -> Vec<Vec<usize>> {
    let closures: Vec<usize> = graph.ring_closure_bonds.clone();
    let mut tree = vec![Vec::new(); n];
    for (i, bond) in graph.bonds.iter().enumerate() {
        if !closures.contains(&i) {
            tree[bond.a].push(bond.b);
            tree[bond.b].push(bond.a);
        }
    }
    closures
        .iter()
        .map(|&c| tree_path(graph.bonds[c].a, graph.bonds[c].b, &tree))
        .collect()
}

fn tree_path(from: usize, to: usize, tree: &[Vec<usize>]) -> Vec<usize> {
    let mut parent = vec![usize::MAX; tree.len()];
    let mut queue = VecDeque::from([from]);
    parent[from] = from;
    while let Some(atom) = queue.pop_front() {
        if atom == to {
            break;
        }
        for &next in &tree[atom] {
            if parent[next] == usize::MAX {
                parent[next] = atom;
                queue.push_back(next);
            }
        }
    }
    let mut path = vec![to];
    let mut at = to;
    while at != from {
        at = parent[at];
        path.push(at);
    }
    path.reverse();
    path
}

/// Direction for the `child`-th new neighbor of an atom entered along
/// `incoming` at tree depth `depth`. The first child turns ±60° with the
/// sign alternating by depth (zigzag); later children fan to the other side,
/// straight ahead, then wider.
fn chain_direction(incoming: (f64, f64), depth: usize, child: usize) -> (f64, f64) {
    let sign = if depth.is_multiple_of(2) { 1.0 } else { -1.0 };
    let turn = match child {
        0 => sign * CHAIN_TURN,
        1 => -sign * CHAIN_TURN,
        2 => 0.0,
        _ => sign * 2.0 * CHAIN_TURN,
    };
    let (sin, cos) = turn.sin_cos();
    let dir = (incoming.0 * cos - incoming.1 * sin, incoming.0 * sin + incoming.1 * cos);
    let len = (dir.0 * dir.0 + dir.1 * dir.1).sqrt();
    (dir.0 / len * BOND_LENGTH, dir.1 / len * BOND_LENGTH)
}

/// Find a cycle-consecutive pair of already-placed ring members, if any.
fn placed_ring_edge(ring: &[usize], pos: &[Option<(f64, f64)>]) -> Option<usize> {
    (0..ring.len()).find(|&i| {
        pos[ring[i]].is_some() && pos[ring[(i + 1) % ring.len()]].is_some()
    })
}

/// Place `ring` as a regular polygon with unit sides.
///
/// Placement anchors on whatever already exists: a placed edge pins the
/// polygon completely (fused rings); a single placed atom — either the
/// `anchor` just placed by the chain walker or a spiro junction — pins one
/// vertex, with the ring body pushed away from everything placed so far;
/// with nothing placed the ring is centred on the origin.
fn place_ring(ring: &[usize], pos: &mut [Option<(f64, f64)>], anchor: Option<(usize, (f64, f64))>) {
    let k = ring.len() as f64;
    let step = std::f64::consts::TAU / k;
    let circumradius = 0.5 * BOND_LENGTH / (std::f64::consts::PI / k).sin();

    if let Some(i) = placed_ring_edge(ring, pos) {
        let u = pos[ring[i]].expect("edge endpoint placed");
        let v = pos[ring[(i + 1) % ring.len()]].expect("edge endpoint placed");
        let mid = ((u.0 + v.0) / 2.0, (u.1 + v.1) / 2.0);
        let edge = (v.0 - u.0, v.1 - u.1);
        let edge_len = (edge.0 * edge.0 + edge.1 * edge.1).sqrt().max(1e-9);
        let apothem = circumradius * (std::f64::consts::PI / k).cos() * edge_len / BOND_LENGTH;
        let perp = (-edge.1 / edge_len, edge.0 / edge_len);
        let c1 = (mid.0 + perp.0 * apothem, mid.1 + perp.1 * apothem);
        let c2 = (mid.0 - perp.0 * apothem, mid.1 - perp.1 * apothem);
        let anchor_pt = placed_centroid(pos);
        let d1 = (c1.0 - anchor_pt.0).powi(2) + (c1.1 - anchor_pt.1).powi(2);
        let d2 = (c2.0 - anchor_pt.0).powi(2) + (c2.1 - anchor_pt.1).powi(2);
        let center = if d1 >= d2 { c1 } else { c2 };
        let start = (u.1 - center.1).atan2(u.0 - center.0);
        // Traversal sign: the placed neighbor tells us which way the cycle
        // winds around the center.
        let plus = vertex(center, circumradius, start + step);
        let minus = vertex(center, circumradius, start - step);
        let dp = (plus.0 - v.0).powi(2) + (plus.1 - v.1).powi(2);
        let dm = (minus.0 - v.0).powi(2) + (minus.1 - v.1).powi(2);
        let sign = if dp <= dm { 1.0 } else { -1.0 };
        for (j, &atom) in ring.iter().cycle().skip(i).take(ring.len()).enumerate() {
            if pos[atom].is_none() {
                pos[atom] = Some(vertex(center, circumradius, start + sign * step * j as f64));
            }
        }
        return;
    }

    let (start_index, center, start_angle) = match anchor {
        Some((atom, dir)) => {
            let at = pos[atom].expect("anchor is placed");
            let center = (at.0 + dir.0 * circumradius, at.1 + dir.1 * circumradius);
            let start_index = ring.iter().position(|&a| a == atom).expect("anchor in ring");
            let angle = (at.1 - center.1).atan2(at.0 - center.0);
            (start_index, center, angle)
        }
        None => match ring.iter().position(|&a| pos[a].is_some()) {
            // Spiro junction: one shared, already-placed vertex.
            Some(start_index) => {
                let at = pos[ring[start_index]].expect("shared vertex placed");
                let centroid = placed_centroid(pos);
                let away = (at.0 - centroid.0, at.1 - centroid.1);
                let len = (away.0 * away.0 + away.1 * away.1).sqrt();
                let dir = if len < 1e-9 { (1.0, 0.0) } else { (away.0 / len, away.1 / len) };
                let center = (at.0 + dir.0 * circumradius, at.1 + dir.1 * circumradius);
                let angle = (at.1 - center.1).atan2(at.0 - center.0);
                (start_index, center, angle)
            }
            None => (0, (0.0, 0.0), std::f64::consts::FRAC_PI_2),
        },
    };
    for (j, &atom) in ring.iter().cycle().skip(start_index).take(ring.len()).enumerate() {
        if pos[atom].is_none() {
            pos[atom] = Some(vertex(center, circumradius, start_angle + step * j as f64));
        }
    }
}

fn vertex(center: (f64, f64), radius: f64, angle: f64) -> (f64, f64) {
    (center.0 + radius * angle.cos(), center.1 + radius * angle.sin())
}

fn placed_centroid(pos: &[Option<(f64, f64)>]) -> (f64, f64) {
    let placed: Vec<(f64, f64)> = pos.iter().flatten().copied().collect();
    if placed.is_empty() {
        return (0.0, 0.0);
    }
    let sum = placed.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    (sum.0 / placed.len() as f64, sum.1 / placed.len() as f64)
}

fn enqueue_ring_members(
    ring: &[usize],
    pos: &[Option<(f64, f64)>],
    depth: usize,
    queue: &mut VecDeque<(usize, (f64, f64), usize)>,
) {
    let center = {
        let members: Vec<(f64, f64)> =
            ring.iter().map(|&a| pos[a].expect("ring member placed")).collect();
        let sum = members.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
        (sum.0 / members.len() as f64, sum.1 / members.len() as f64)
    };
    for &atom in ring {
        let at = pos[atom].expect("ring member placed");
        let out = (at.0 - center.0, at.1 - center.1);
        let len = (out.0 * out.0 + out.1 * out.1).sqrt();
        let dir = if len < 1e-9 { (1.0, 0.0) } else { (out.0 / len, out.1 / len) };
        queue.push_back((atom, dir, depth));
    }
}

/// Fixed-iteration pairwise repulsion. Ring atoms stay pinned so polygons
/// keep their shape; free atoms absorb the full correction when pushed away
/// from a pinned one.
fn relax(coordinates: &mut [(f64, f64)], in_ring: &[bool]) {
    let n = coordinates.len();
    for _ in 0..RELAX_ITERATIONS {
        let mut shift = vec![(0.0f64, 0.0f64); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if in_ring[i] && in_ring[j] {
                    continue;
                }
                let dx = coordinates[j].0 - coordinates[i].0;
                let dy = coordinates[j].1 - coordinates[i].1;
                let dist = (dx * dx + dy * dy).sqrt();
                if dist >= MIN_SEPARATION {
                    continue;
                }
                let axis = if dist < 1e-9 {
                    // Coincident atoms: pick a deterministic push direction.
                    let theta = (i * 7 + j * 13) as f64;
                    (theta.cos(), theta.sin())
                } else {
                    (dx / dist, dy / dist)
                };
                let gap = MIN_SEPARATION - dist;
                let (wi, wj) = match (in_ring[i], in_ring[j]) {
                    (false, false) => (0.5, 0.5),
                    (true, false) => (0.0, 1.0),
                    (false, true) => (1.0, 0.0),
                    (true, true) => unreachable!("skipped above"),
                };
                shift[i].0 -= axis.0 * gap * wi;
                shift[i].1 -= axis.1 * gap * wi;
                shift[j].0 += axis.0 * gap * wj;
                shift[j].1 += axis.1 * gap * wj;
            }
        }
        for (c, s) in coordinates.iter_mut().zip(&shift) {
            c.0 += s.0;
            c.1 += s.1;
        }
    }
}
