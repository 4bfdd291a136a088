//! Stroke segmentation: untangling a skeleton network into natural strokes.
//!
//! The skeleton of an ink mask is first organized into a graph whose nodes
//! are endpoints (pixels with exactly one skeleton neighbor) and junction
//! clusters (8-connected groups of pixels with three or more neighbors),
//! connected by arcs of plain degree-2 pixel chains.
//!
//! Segmentation then repeatedly extracts the endpoint-to-endpoint path with
//! the smallest bending energy, where bending only costs anything near
//! junctions: the cost of a path is the integral of |curvature| weighted by
//! a junction potential φ that decays with distance from junction centers.
//! A straight continuation through a crossing is free, so an X of two
//! strokes is resolved into the two straight lines; after removing a stroke
//! the residual network is repaired (crossing arcs reconnected, new
//! endpoints inserted where an occluded stroke was cut — the T case) and the
//! process recurses. Closed curves and single-endpoint components are
//! special cases emitted directly.

use std::collections::{BinaryHeap, HashSet};

use crate::error::{Error, Result};
use crate::geometry::{
    polyline_length, smooth_polyline, wrap_angle, Point,
};
use crate::grid::{connected_components, Grid, Pixel};
use crate::raster::SkeletonField;

/// Tuning knobs for segmentation.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    /// Width of the junction potential in pixels. `None` derives
    /// 3 × median rib length of the drawing.
    pub sigma_px: Option<f64>,
    /// Strokes shorter than this (skeleton arclength) are discarded.
    pub min_stroke_len_mm: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig { sigma_px: None, min_stroke_len_mm: 2.0 }
    }
}

/// One segmented stroke.
#[derive(Clone, Debug)]
pub struct Stroke {
    /// Position in the emission order of its drawing.
    pub id: usize,
    /// Drawing this stroke came from; filled by the pipeline.
    pub source_id: String,
    /// Ordered skeleton polyline (a cycle when `closed`).
    pub skeleton: Vec<Pixel>,
    /// True for closed curves (zero endpoints).
    pub closed: bool,
    /// Closed outline of the ink region claimed by this stroke.
    pub boundary: Vec<Pixel>,
    /// Rib length (stroke half-width) at each skeleton point, in mm.
    pub ribs_mm: Vec<f64>,
    /// Every skeleton pixel this stroke accounts for: the polyline plus any
    /// junction straggler pixels assigned during the conservation sweep.
    pub owned: Vec<Pixel>,
}

impl Stroke {
    /// Skeleton as continuous points.
    pub fn skeleton_points(&self) -> Vec<Point> {
        self.skeleton.iter().map(|&p| Point::from_pixel(p)).collect()
    }

    /// Boundary as continuous points.
    pub fn boundary_points(&self) -> Vec<Point> {
        self.boundary.iter().map(|&p| Point::from_pixel(p)).collect()
    }

    /// Skeleton arclength in pixels.
    pub fn length_px(&self) -> f64 {
        let open = polyline_length(&self.skeleton_points());
        if self.closed && self.skeleton.len() > 2 {
            open + Point::from_pixel(self.skeleton[self.skeleton.len() - 1])
                .dist(Point::from_pixel(self.skeleton[0]))
        } else {
            open
        }
    }

    /// Mean rib length in mm; 0 for an empty rib list.
    pub fn mean_rib_mm(&self) -> f64 {
        if self.ribs_mm.is_empty() {
            0.0
        } else {
            self.ribs_mm.iter().sum::<f64>() / self.ribs_mm.len() as f64
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum NodeKind {
    Endpoint,
    Junction,
}

#[derive(Clone, Debug)]
struct Node {
    kind: NodeKind,
    /// Endpoint: its single pixel. Junction: cluster pixels not yet claimed
    /// by an extracted stroke.
    pixels: Vec<Pixel>,
    /// Anchor position: the pixel center (endpoint) or cluster centroid
    /// (junction); fixed at build time.
    pos: Point,
    alive: bool,
}

#[derive(Clone, Debug)]
struct Arc {
    a: usize,
    b: usize,
    /// Interior (degree ≤ 2) pixels ordered from the `a` side to the `b`
    /// side; may be empty when two nodes touch directly.
    chain: Vec<Pixel>,
    alive: bool,
}

/// Skeleton organized into endpoints, junction clusters, arcs, plus the two
/// complete-by-construction cases: closed curves that touch no node, and
/// isolated single pixels.
#[derive(Clone, Debug)]
pub struct SkeletonGraph {
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
    /// Pure cycles (every pixel degree 2), each an ordered cycle.
    pub closed_loops: Vec<Vec<Pixel>>,
    /// Degree-0 pixels.
    pub dots: Vec<Pixel>,
}

impl SkeletonGraph {
    pub fn endpoint_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.alive && n.kind == NodeKind::Endpoint).count()
    }

    pub fn junction_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.alive && n.kind == NodeKind::Junction).count()
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.iter().filter(|a| a.alive).count()
    }

    /// Pixels of all live endpoints, sorted.
    pub fn endpoint_pixels(&self) -> Vec<Pixel> {
        let mut v: Vec<Pixel> = self
            .nodes
            .iter()
            .filter(|n| n.alive && n.kind == NodeKind::Endpoint)
            .map(|n| n.pixels[0])
            .collect();
        v.sort();
        v
    }

    /// Anchor positions of all live junctions.
    pub fn junction_positions(&self) -> Vec<Point> {
        self.nodes
            .iter()
            .filter(|n| n.alive && n.kind == NodeKind::Junction)
            .map(|n| n.pos)
            .collect()
    }

    fn live_arcs_at(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, arc) in self.arcs.iter().enumerate() {
            if !arc.alive {
                continue;
            }
            if arc.a == node {
                out.push(i);
            }
            if arc.b == node {
                // Loop arcs occupy two slots.
                out.push(i);
            }
        }
        out
    }

    fn anchor(&self, node: usize) -> Point {
        self.nodes[node].pos
    }
}

/// Build the skeleton graph by classifying pixels on their 8-neighborhood
/// degree and tracing the chains between nodes. An empty skeleton yields an
/// empty graph.
pub fn build_skeleton_graph(field: &SkeletonField) -> SkeletonGraph {
    let mask = field.skeleton_mask();
    let degree = |p: Pixel| -> usize {
        p.neighbors8().iter().filter(|q| mask.is_set(q.x, q.y)).count()
    };

    // Classify.
    let mut junction_mask = Grid::filled(mask.width(), mask.height(), false);
    let mut endpoints = Vec::new();
    let mut dots = Vec::new();
    for &p in &field.skeleton {
        match degree(p) {
            0 => dots.push(p),
            1 => endpoints.push(p),
            d if d >= 3 => junction_mask.set(p, true),
            _ => {}
        }
    }

    let mut nodes = Vec::new();
    let mut node_of = std::collections::HashMap::new();
    for cluster in connected_components(&junction_mask) {
        let id = nodes.len();
        let cx = cluster.iter().map(|p| p.x as f64).sum::<f64>() / cluster.len() as f64;
        let cy = cluster.iter().map(|p| p.y as f64).sum::<f64>() / cluster.len() as f64;
        for &p in &cluster {
            node_of.insert(p, id);
        }
        nodes.push(Node {
            kind: NodeKind::Junction,
            pixels: cluster,
            pos: Point::new(cx, cy),
            alive: true,
        });
    }
    for &p in &endpoints {
        let id = nodes.len();
        node_of.insert(p, id);
        nodes.push(Node {
            kind: NodeKind::Endpoint,
            pixels: vec![p],
            pos: Point::from_pixel(p),
            alive: true,
        });
    }

    // Trace chains. `visited` marks chain (degree-2) pixels already assigned
    // to an arc.
    let mut visited = Grid::filled(mask.width(), mask.height(), false);
    let mut arcs: Vec<Arc> = Vec::new();
    let mut node_pixel_list: Vec<(usize, Pixel)> = Vec::new();
    for (id, n) in nodes.iter().enumerate() {
        for &p in &n.pixels {
            node_pixel_list.push((id, p));
        }
    }
    node_pixel_list.sort_by_key(|&(_, p)| p);

    for &(nid, p) in &node_pixel_list {
        for q in p.neighbors8() {
            if !mask.is_set(q.x, q.y) {
                continue;
            }
            if let Some(&other) = node_of.get(&q) {
                // Direct node-to-node adjacency: an arc with no interior
                // chain. Created once, from the smaller node id; adjacency
                // inside one junction cluster is not an arc.
                if other != nid && nid < other {
                    let dup = arcs.iter().any(|a| {
                        a.chain.is_empty()
                            && ((a.a == nid && a.b == other) || (a.a == other && a.b == nid))
                    });
                    if !dup {
                        arcs.push(Arc { a: nid, b: other, chain: Vec::new(), alive: true });
                    }
                }
                continue;
            }
            if visited.is_set(q.x, q.y) {
                continue;
            }
            // Walk the degree-2 chain until the next node pixel.
            let mut chain = Vec::new();
            let mut prev = p;
            let mut cur = q;
            let terminal;
            loop {
                chain.push(cur);
                visited.set(cur, true);
                let next = cur
                    .neighbors8()
                    .into_iter()
                    .find(|r| mask.is_set(r.x, r.y) && *r != prev)
                    .expect("degree-2 chain pixel must have a second neighbor");
                if let Some(&t) = node_of.get(&next) {
                    terminal = t;
                    break;
                }
                prev = cur;
                cur = next;
            }
            arcs.push(Arc { a: nid, b: terminal, chain, alive: true });
        }
    }

    // Remaining unvisited degree-2 pixels form pure cycles.
    let mut closed_loops = Vec::new();
    let mut loop_seen = Grid::filled(mask.width(), mask.height(), false);
    for &p in &field.skeleton {
        if node_of.contains_key(&p)
            || visited.is_set(p.x, p.y)
            || loop_seen.is_set(p.x, p.y)
            || degree(p) == 0
        {
            continue;
        }
        let mut cycle = vec![p];
        loop_seen.set(p, true);
        let mut prev = p;
        let mut cur = p
            .neighbors8()
            .into_iter()
            .find(|r| mask.is_set(r.x, r.y))
            .expect("cycle pixel has neighbors");
        while cur != p {
            cycle.push(cur);
            loop_seen.set(cur, true);
            let next = cur
                .neighbors8()
                .into_iter()
                .find(|r| mask.is_set(r.x, r.y) && *r != prev)
                .expect("cycle pixel has a continuation");
            prev = cur;
            cur = next;
        }
        closed_loops.push(cycle);
    }

    SkeletonGraph { nodes, arcs, closed_loops, dots }
}

/// Junction potential φ(x) = (1/n) Σ_i exp(−‖x−j_i‖²/σ²): 1 at a lone
/// junction, decaying with distance, and 0 by convention when there are no
/// junctions (bending is then free everywhere).
pub fn junction_potential(x: Point, junctions: &[Point], sigma: f64) -> f64 {
    assert!(sigma > 0.0, "junction potential needs sigma > 0");
    if junctions.is_empty() {
        return 0.0;
    }
    let s2 = sigma * sigma;
    junctions.iter().map(|j| (-(x.dist(*j).powi(2)) / s2).exp()).sum::<f64>()
        / junctions.len() as f64
}

/// Bending cost of a path: the discrete integral of |curvature| weighted by
/// the junction potential. The path is smoothed with a 5-point moving
/// average to suppress pixel-grid aliasing; each interior vertex contributes
/// |turning angle| · φ(vertex). Paths with fewer than 3 points cost 0.
pub fn path_cost(path: &[Point], junctions: &[Point], sigma: f64) -> f64 {
    if path.len() < 3 {
        return 0.0;
    }
    let sm = smooth_polyline(path, 5);
    let mut cost = 0.0;
    for i in 1..sm.len() - 1 {
        let d0 = sm[i].sub(sm[i - 1]);
        let d1 = sm[i + 1].sub(sm[i]);
        if d0.norm() == 0.0 || d1.norm() == 0.0 {
            continue;
        }
        let turn = wrap_angle(d1.y.atan2(d1.x) - d0.y.atan2(d0.x)).abs();
        cost += turn * junction_potential(sm[i], junctions, sigma);
    }
    cost
}

/// A stroke pulled out of the graph by [`extract_optimal_stroke`].
#[derive(Clone, Debug)]
pub struct ExtractedPath {
    pub pixels: Vec<Pixel>,
    pub endpoints: (Pixel, Pixel),
    pub cost: f64,
    pub length_px: f64,
}

/// Oriented-arc step used during the search and for materialization.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct Step {
    arc: usize,
    /// false: a→b, true: b→a.
    rev: bool,
}

impl Step {
    fn from_node(&self, g: &SkeletonGraph) -> usize {
        if self.rev {
            g.arcs[self.arc].b
        } else {
            g.arcs[self.arc].a
        }
    }

    fn to_node(&self, g: &SkeletonGraph) -> usize {
        if self.rev {
            g.arcs[self.arc].a
        } else {
            g.arcs[self.arc].b
        }
    }

    fn oriented_chain(&self, g: &SkeletonGraph) -> Vec<Pixel> {
        let mut c = g.arcs[self.arc].chain.clone();
        if self.rev {
            c.reverse();
        }
        c
    }
}

/// Anchor-to-anchor point sequence of an oriented arc (anchors included).
fn step_points(g: &SkeletonGraph, s: Step) -> Vec<Point> {
    let mut pts = vec![g.anchor(s.from_node(g))];
    pts.extend(s.oriented_chain(g).iter().map(|&p| Point::from_pixel(p)));
    pts.push(g.anchor(s.to_node(g)));
    pts
}

/// Internal bending cost of one arc (interior vertices only); symmetric in
/// direction.
fn arc_internal_cost(g: &SkeletonGraph, arc: usize, junctions: &[Point], sigma: f64) -> f64 {
    let s = Step { arc, rev: false };
    let pts = smooth_polyline(&step_points(g, s), 5);
    let mut cost = 0.0;
    for i in 1..pts.len().saturating_sub(1) {
        let d0 = pts[i].sub(pts[i - 1]);
        let d1 = pts[i + 1].sub(pts[i]);
        if d0.norm() == 0.0 || d1.norm() == 0.0 {
            continue;
        }
        let turn = wrap_angle(d1.y.atan2(d1.x) - d0.y.atan2(d0.x)).abs();
        cost += turn * junction_potential(pts[i], junctions, sigma);
    }
    cost
}

/// Direction of travel when leaving `s` into its destination anchor,
/// measured as the chord over roughly `window` px of trailing arclength.
/// One-pixel segments would swing by ±27° from grid quantization alone, and
/// near a crossing the ridge curls toward the shared ink blob; a chord at
/// the scale of the potential radius reads through both.
fn incoming_direction(g: &SkeletonGraph, s: Step, window: f64) -> f64 {
    let pts = step_points(g, s);
    let n = pts.len();
    let mut i = n - 1;
    let mut acc = 0.0;
    while i > 0 && acc < window {
        acc += pts[i].dist(pts[i - 1]);
        i -= 1;
    }
    let d = pts[n - 1].sub(pts[i]);
    if d.norm() > 0.0 {
        d.y.atan2(d.x)
    } else {
        // Chord degenerated (a tight loop back to the anchor): fall back to
        // the last segment.
        let d = pts[n - 1].sub(pts[n - 2]);
        d.y.atan2(d.x)
    }
}

/// Direction of travel when departing the source anchor along `s`, the
/// mirror of [`incoming_direction`].
fn outgoing_direction(g: &SkeletonGraph, s: Step, window: f64) -> f64 {
    let pts = step_points(g, s);
    let mut i = 0;
    let mut acc = 0.0;
    while i + 1 < pts.len() && acc < window {
        acc += pts[i].dist(pts[i + 1]);
        i += 1;
    }
    let d = pts[i].sub(pts[0]);
    if d.norm() > 0.0 {
        d.y.atan2(d.x)
    } else {
        let d = pts[1].sub(pts[0]);
        d.y.atan2(d.x)
    }
}

const COST_TOL: f64 = 1e-9;

#[derive(PartialEq)]
struct HeapEntry {
    cost: f64,
    len: f64,
    state: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // BinaryHeap is a max-heap; invert so the smallest cost (then the
        // longest length, then the smallest state id) pops first.
        other
            .cost
            .total_cmp(&self.cost)
            .then(self.len.total_cmp(&other.len))
            .then(other.state.cmp(&self.state))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy)]
struct Label {
    cost: f64,
    len: f64,
    parent: Option<usize>,
    settled: bool,
}

/// Best path (by additive bending cost) from `source` to every other live
/// endpoint. Returns, per reachable target node, the final search state used
/// to reconstruct the step sequence.
fn best_paths_from(
    g: &SkeletonGraph,
    source: usize,
    junctions: &[Point],
    sigma: f64,
) -> Vec<(usize, Vec<Step>, f64)> {
    let n_states = g.arcs.len() * 2;
    let mut labels: Vec<Option<Label>> = vec![None; n_states];
    let mut heap = BinaryHeap::new();
    let arc_cost: Vec<f64> = (0..g.arcs.len())
        .map(|i| if g.arcs[i].alive { arc_internal_cost(g, i, junctions, sigma) } else { 0.0 })
        .collect();
    let arc_len: Vec<f64> =
        (0..g.arcs.len()).map(|i| polyline_length(&step_points(g, Step { arc: i, rev: false }))).collect();

    let state_id = |s: Step| s.arc * 2 + s.rev as usize;
    let state_of = |id: usize| Step { arc: id / 2, rev: id % 2 == 1 };

    for arc in g.live_arcs_at(source) {
        for rev in [false, true] {
            let s = Step { arc, rev };
            if s.from_node(g) != source {
                continue;
            }
            let id = state_id(s);
            let cand = Label { cost: arc_cost[arc], len: arc_len[arc], parent: None, settled: false };
            let better = match &labels[id] {
                None => true,
                Some(l) => {
                    cand.cost < l.cost - COST_TOL
                        || ((cand.cost - l.cost).abs() <= COST_TOL && cand.len > l.len + COST_TOL)
                }
            };
            if better {
                labels[id] = Some(cand);
                heap.push(HeapEntry { cost: cand.cost, len: cand.len, state: id });
            }
        }
    }

    let mut budget = 64 * n_states.max(8);
    while let Some(entry) = heap.pop() {
        if budget == 0 {
            log::warn!("path search budget exhausted; keeping best labels so far");
            break;
        }
        budget -= 1;
        let id = entry.state;
        let label = match labels[id] {
            Some(l) => l,
            None => continue,
        };
        if (entry.cost - label.cost).abs() > COST_TOL || (entry.len - label.len).abs() > COST_TOL {
            continue; // stale heap entry
        }
        labels[id].as_mut().unwrap().settled = true;
        let s = state_of(id);
        let v = s.to_node(g);
        if !g.nodes[v].alive {
            continue;
        }
        if g.nodes[v].kind == NodeKind::Endpoint {
            continue; // paths terminate at endpoints
        }
        let theta_in = incoming_direction(g, s, sigma);
        let mut outs = g.live_arcs_at(v);
        outs.sort_unstable();
        outs.dedup();
        for b in outs {
            if b == s.arc {
                continue;
            }
            for rev in [false, true] {
                let t = Step { arc: b, rev };
                if t.from_node(g) != v {
                    continue;
                }
                let theta_out = outgoing_direction(g, t, sigma);
                let turn = wrap_angle(theta_out - theta_in).abs();
                let trans = turn * junction_potential(g.anchor(v), junctions, sigma);
                let cand = Label {
                    cost: label.cost + trans + arc_cost[b],
                    len: label.len + arc_len[b],
                    parent: Some(id),
                    settled: false,
                };
                let tid = state_id(t);
                let better = match &labels[tid] {
                    None => true,
                    Some(l) => {
                        cand.cost < l.cost - COST_TOL
                            || ((cand.cost - l.cost).abs() <= COST_TOL && cand.len > l.len + COST_TOL)
                    }
                };
                if better {
                    labels[tid] = Some(cand);
                    heap.push(HeapEntry { cost: cand.cost, len: cand.len, state: tid });
                }
            }
        }
    }

    // Collect the best terminal state per target endpoint.
    let mut results = Vec::new();
    for target in 0..g.nodes.len() {
        if target == source || !g.nodes[target].alive || g.nodes[target].kind != NodeKind::Endpoint {
            continue;
        }
        let mut best: Option<(usize, Label)> = None;
        for id in 0..n_states {
            let label = match labels[id] {
                Some(l) => l,
                None => continue,
            };
            if state_of(id).to_node(g) != target {
                continue;
            }
            let better = match &best {
                None => true,
                Some((_, bl)) => {
                    label.cost < bl.cost - COST_TOL
                        || ((label.cost - bl.cost).abs() <= COST_TOL && label.len > bl.len + COST_TOL)
                }
            };
            if better {
                best = Some((id, label));
            }
        }
        if let Some((id, label)) = best {
            // Reconstruct and reject paths that reuse an undirected arc.
            let mut steps = Vec::new();
            let mut cur = Some(id);
            while let Some(c) = cur {
                steps.push(state_of(c));
                cur = labels[c].and_then(|l| l.parent);
            }
            steps.reverse();
            let mut used = HashSet::new();
            if steps.iter().all(|st| used.insert(st.arc)) {
                results.push((target, steps, label.cost));
            }
        }
    }
    results
}

/// Turn a step sequence into the actual pixel polyline. At every
/// intermediate junction the cluster pixels near the crossing chord are
/// inserted, ordered by their projection onto the local travel direction.
/// Pure: committing a path is a separate step ([`claim_path`]), so a path
/// that revisits a junction reads the same cluster both times.
fn materialize(g: &SkeletonGraph, source: usize, steps: &[Step]) -> Vec<Pixel> {
    let mut pixels: Vec<Pixel> = vec![g.nodes[source].pixels[0]];
    let mut seen: HashSet<Pixel> = pixels.iter().copied().collect();
    for (i, s) in steps.iter().enumerate() {
        if i > 0 {
            // Entering this arc through a junction: bridge its pixels.
            let v = s.from_node(g);
            let entry = *pixels.last().unwrap();
            let chain = s.oriented_chain(g);
            let exit_pt = chain
                .first()
                .map(|&p| Point::from_pixel(p))
                .unwrap_or_else(|| g.anchor(s.to_node(g)));
            let dir = exit_pt.sub(Point::from_pixel(entry));
            let chord = dir.norm();
            // Only cluster pixels near the entry-exit chord join the path;
            // a wide cluster (a collapsed crossing blob) would otherwise
            // zigzag the polyline and swamp the bending cost. Pixels left
            // out are swept to the nearest stroke afterwards.
            let mut bridge: Vec<Pixel> = g.nodes[v]
                .pixels
                .iter()
                .copied()
                .filter(|&p| {
                    if chord <= 0.0 {
                        return true;
                    }
                    let rel = Point::from_pixel(p).sub(Point::from_pixel(entry));
                    let along = rel.dot(dir) / chord;
                    let perp = (rel.dot(rel) - along * along).max(0.0).sqrt();
                    (-0.5..=chord + 0.5).contains(&along) && perp <= 1.0
                })
                .collect();
            bridge.sort_by(|p, q| {
                let pp = Point::from_pixel(*p).sub(Point::from_pixel(entry)).dot(dir);
                let qq = Point::from_pixel(*q).sub(Point::from_pixel(entry)).dot(dir);
                pp.total_cmp(&qq).then(p.cmp(q))
            });
            for b in bridge {
                if seen.insert(b) {
                    pixels.push(b);
                }
            }
        }
        for p in s.oriented_chain(g) {
            if seen.insert(p) {
                pixels.push(p);
            }
        }
        if g.nodes[s.to_node(g)].kind == NodeKind::Endpoint {
            let e = g.nodes[s.to_node(g)].pixels[0];
            if seen.insert(e) {
                pixels.push(e);
            }
        }
    }
    pixels
}

/// Commit a materialized path: remove exactly the pixels it took from the
/// junction clusters it crossed. Cluster pixels the corridor filter left
/// behind stay with the node — a surviving junction can still bridge them
/// into a later stroke, and the conservation sweep catches the rest.
fn claim_path(g: &mut SkeletonGraph, steps: &[Step], pixels: &[Pixel]) {
    let taken: HashSet<Pixel> = pixels.iter().copied().collect();
    let mut visited: Vec<usize> = steps
        .iter()
        .flat_map(|s| [s.from_node(g), s.to_node(g)])
        .filter(|&v| g.nodes[v].kind == NodeKind::Junction)
        .collect();
    visited.sort_unstable();
    visited.dedup();
    for v in visited {
        g.nodes[v].pixels.retain(|p| !taken.contains(p));
    }
}

/// Repair the graph after the arcs in `steps` have been consumed: kill the
/// used arcs and the path's endpoints, then for every junction the path
/// visited reconnect (degree 2 → merge the two survivors into one arc, the
/// X case), insert a new endpoint (degree 1 → the occluded-stem T case), or
/// delete (degree 0).
fn surgery(g: &mut SkeletonGraph, source: usize, steps: &[Step]) {
    for s in steps {
        g.arcs[s.arc].alive = false;
    }
    g.nodes[source].alive = false;
    if let Some(last) = steps.last() {
        let t = last.to_node(g);
        if g.nodes[t].kind == NodeKind::Endpoint {
            g.nodes[t].alive = false;
        }
    }
    let mut visited: Vec<usize> = steps
        .iter()
        .map(|s| s.to_node(g))
        .filter(|&v| g.nodes[v].alive && g.nodes[v].kind == NodeKind::Junction)
        .collect();
    visited.sort_unstable();
    visited.dedup();
    for v in visited {
        repair_junction(g, v);
    }
}

/// Apply the degree rules to one junction node.
fn repair_junction(g: &mut SkeletonGraph, v: usize) {
    let incident = g.live_arcs_at(v);
    match incident.len() {
        0 => g.nodes[v].alive = false,
        1 => {
            // T case: the surviving arc gains a fresh endpoint where it met
            // the junction.
            let arc = incident[0];
            if g.arcs[arc].a == v && g.arcs[arc].b == v {
                // A loop hanging on a dead junction is a closed curve now.
                let chain = std::mem::take(&mut g.arcs[arc].chain);
                g.arcs[arc].alive = false;
                g.nodes[v].alive = false;
                if !chain.is_empty() {
                    g.closed_loops.push(chain);
                }
                return;
            }
            let at_a = g.arcs[arc].a == v;
            let popped = if at_a {
                if g.arcs[arc].chain.is_empty() { None } else { Some(g.arcs[arc].chain.remove(0)) }
            } else {
                g.arcs[arc].chain.pop()
            };
            match popped {
                Some(px) => {
                    let id = g.nodes.len();
                    g.nodes.push(Node {
                        kind: NodeKind::Endpoint,
                        pixels: vec![px],
                        pos: Point::from_pixel(px),
                        alive: true,
                    });
                    if at_a {
                        g.arcs[arc].a = id;
                    } else {
                        g.arcs[arc].b = id;
                    }
                    g.nodes[v].alive = false;
                }
                None => {
                    // No interior pixel left: the far side must be an
                    // endpoint (inter-junction arcs always carry a chain);
                    // the remnant is that single pixel, emitted as a dot.
                    let other = if at_a { g.arcs[arc].b } else { g.arcs[arc].a };
                    g.arcs[arc].alive = false;
                    g.nodes[v].alive = false;
                    if g.nodes[other].kind == NodeKind::Endpoint {
                        g.nodes[other].alive = false;
                        g.dots.push(g.nodes[other].pixels[0]);
                    }
                }
            }
        }
        2 => {
            // X case: reconnect the two survivors into one continuous arc.
            let (a1, a2) = (incident[0], incident[1]);
            if a1 == a2 {
                // Both slots belong to one loop arc: it closes on itself.
                let chain = std::mem::take(&mut g.arcs[a1].chain);
                g.arcs[a1].alive = false;
                g.nodes[v].alive = false;
                if !chain.is_empty() {
                    g.closed_loops.push(chain);
                }
                return;
            }
            // Orient first arc to end at v, second to start at v.
            let s1 = Step { arc: a1, rev: g.arcs[a1].b != v };
            let s2 = Step { arc: a2, rev: g.arcs[a2].a != v };
            let from = s1.from_node(g);
            let to = s2.to_node(g);
            let mut chain = s1.oriented_chain(g);
            chain.extend(s2.oriented_chain(g));
            g.arcs[a1].alive = false;
            g.arcs[a2].alive = false;
            g.nodes[v].alive = false;
            if from == to && g.nodes[from].kind == NodeKind::Endpoint {
                // Degenerate: would form a loop pinned at an endpoint;
                // cannot happen for degree-1 nodes, keep as loop arc anyway.
                g.arcs.push(Arc { a: from, b: to, chain, alive: true });
            } else {
                g.arcs.push(Arc { a: from, b: to, chain, alive: true });
            }
        }
        _ => {}
    }
}

/// Extract the minimum-bending endpoint-to-endpoint stroke, remove it from
/// the graph, and repair the residual network. Returns `None` when fewer
/// than two endpoints remain. Ties on cost are broken by the longest
/// arclength, then by lexicographic endpoint order.
pub fn extract_optimal_stroke(g: &mut SkeletonGraph, sigma: f64) -> Option<ExtractedPath> {
    let endpoints: Vec<usize> = (0..g.nodes.len())
        .filter(|&i| g.nodes[i].alive && g.nodes[i].kind == NodeKind::Endpoint)
        .collect();
    if endpoints.len() < 2 {
        return None;
    }
    let junctions = g.junction_positions();

    // Candidate per endpoint pair: search from each source, keep pairs
    // oriented from the lexicographically smaller endpoint pixel.
    struct Candidate {
        source: usize,
        steps: Vec<Step>,
        cost: f64,
        length: f64,
        pair: (Pixel, Pixel),
        pixels: Vec<Pixel>,
    }
    let mut candidates: Vec<Candidate> = Vec::new();
    for &src in &endpoints {
        let paths = best_paths_from(g, src, &junctions, sigma);
        for (dst, steps, search_cost) in paths {
            let sp = g.nodes[src].pixels[0];
            let dp = g.nodes[dst].pixels[0];
            if sp > dp {
                continue; // the reverse orientation covers this pair
            }
            // The ranking cost is the search objective (potential-weighted
            // chain curvature plus junction turns at chord scale): the raw
            // materialized polyline is too noisy inside crossing blobs to
            // re-score — its ridge curls toward the shared ink and would
            // charge straight continuations for the detour. The dry run
            // still fixes the pixel set and the geometric length.
            let pixels = materialize(g, src, &steps);
            let pts: Vec<Point> = pixels.iter().map(|&p| Point::from_pixel(p)).collect();
            let length = polyline_length(&pts);
            candidates.push(Candidate {
                source: src,
                steps,
                cost: search_cost,
                length,
                pair: (sp, dp),
                pixels,
            });
        }
    }
    let best = candidates.into_iter().min_by(|a, b| {
        let c = if (a.cost - b.cost).abs() <= COST_TOL {
            std::cmp::Ordering::Equal
        } else {
            a.cost.total_cmp(&b.cost)
        };
        c.then_with(|| {
            if (a.length - b.length).abs() <= COST_TOL {
                std::cmp::Ordering::Equal
            } else {
                b.length.total_cmp(&a.length)
            }
        })
        .then_with(|| a.pair.cmp(&b.pair))
    })?;

    // Claim for real, then repair.
    claim_path(g, &best.steps, &best.pixels);
    surgery(g, best.source, &best.steps);
    Some(ExtractedPath {
        pixels: best.pixels,
        endpoints: best.pair,
        cost: best.cost,
        length_px: best.length,
    })
}

/// Deterministic walk used for components with fewer than two endpoints:
/// start somewhere, keep choosing the most collinear live continuation at
/// each junction, and claim pixels along the way.
fn walk_leftover(g: &mut SkeletonGraph, sigma: f64) -> Option<Vec<Pixel>> {
    // Prefer starting from a live endpoint that still has a live arc; fall
    // back to the live arc with the smallest leading pixel.
    let endpoint_start = (0..g.nodes.len())
        .filter(|&i| {
            g.nodes[i].alive
                && g.nodes[i].kind == NodeKind::Endpoint
                && !g.live_arcs_at(i).is_empty()
        })
        .min_by_key(|&i| g.nodes[i].pixels[0]);

    let (source, first): (usize, Step) = if let Some(e) = endpoint_start {
        let arc = *g.live_arcs_at(e).first().unwrap();
        let rev = g.arcs[arc].a != e;
        (e, Step { arc, rev })
    } else {
        let arc = (0..g.arcs.len()).filter(|&i| g.arcs[i].alive).min_by_key(|&i| {
            g.arcs[i].chain.first().copied().unwrap_or(Pixel::new(i32::MAX, i32::MAX))
        })?;
        (g.arcs[arc].a, Step { arc, rev: false })
    };

    // Chain steps by most-collinear continuation.
    let mut steps = vec![first];
    let mut used: HashSet<usize> = [first.arc].into_iter().collect();
    loop {
        let cur = *steps.last().unwrap();
        let v = cur.to_node(g);
        if g.nodes[v].kind == NodeKind::Endpoint {
            break;
        }
        let theta_in = incoming_direction(g, cur, sigma);
        let mut options: Vec<(f64, usize, Step)> = Vec::new();
        let mut outs = g.live_arcs_at(v);
        outs.sort_unstable();
        outs.dedup();
        for b in outs {
            if used.contains(&b) {
                continue;
            }
            for rev in [false, true] {
                let t = Step { arc: b, rev };
                if t.from_node(g) != v {
                    continue;
                }
                let turn = wrap_angle(outgoing_direction(g, t, sigma) - theta_in).abs();
                options.push((turn, b, t));
            }
        }
        match options
            .into_iter()
            .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.rev.cmp(&y.2.rev)))
        {
            Some((_, b, t)) => {
                used.insert(b);
                steps.push(t);
            }
            None => break,
        }
    }

    let start_is_endpoint = g.nodes[source].kind == NodeKind::Endpoint;
    let mut pixels = if start_is_endpoint {
        let px = materialize(g, source, &steps);
        claim_path(g, &steps, &px);
        px
    } else {
        // Starting mid-network: materialize without a leading endpoint
        // pixel by bridging from the source junction directly.
        let mut px: Vec<Pixel> = Vec::new();
        let mut seen = HashSet::new();
        for (i, s) in steps.iter().enumerate() {
            let v = s.from_node(g);
            if g.nodes[v].kind == NodeKind::Junction && (i > 0 || !g.nodes[v].pixels.is_empty()) {
                let entry = px
                    .last()
                    .map(|&p| Point::from_pixel(p))
                    .unwrap_or_else(|| g.anchor(v));
                let chain = s.oriented_chain(g);
                let exit_pt = chain
                    .first()
                    .map(|&p| Point::from_pixel(p))
                    .unwrap_or_else(|| g.anchor(s.to_node(g)));
                let dir = exit_pt.sub(entry);
                let mut bridge = g.nodes[v].pixels.clone();
                bridge.sort_by(|p, q| {
                    let pp = Point::from_pixel(*p).sub(entry).dot(dir);
                    let qq = Point::from_pixel(*q).sub(entry).dot(dir);
                    pp.total_cmp(&qq).then(p.cmp(q))
                });
                for b in bridge {
                    if seen.insert(b) {
                        px.push(b);
                    }
                }
                g.nodes[v].pixels.clear();
            }
            for p in s.oriented_chain(g) {
                if seen.insert(p) {
                    px.push(p);
                }
            }
            if g.nodes[s.to_node(g)].kind == NodeKind::Endpoint {
                let e = g.nodes[s.to_node(g)].pixels[0];
                if seen.insert(e) {
                    px.push(e);
                }
            }
        }
        px
    };
    if pixels.is_empty() {
        // Nothing materialized (fully-claimed remnants): drop the arcs to
        // guarantee progress.
        for s in &steps {
            g.arcs[s.arc].alive = false;
        }
        return walk_next_or_none(g, sigma);
    }
    pixels.dedup();
    surgery_walk(g, source, &steps, start_is_endpoint);
    Some(pixels)
}

fn walk_next_or_none(g: &mut SkeletonGraph, sigma: f64) -> Option<Vec<Pixel>> {
    if g.arcs.iter().any(|a| a.alive) {
        walk_leftover(g, sigma)
    } else {
        None
    }
}

/// Surgery variant for leftover walks: consume arcs, retire endpoints that
/// were materialized, and repair visited junctions.
fn surgery_walk(g: &mut SkeletonGraph, source: usize, steps: &[Step], source_is_endpoint: bool) {
    for s in steps {
        g.arcs[s.arc].alive = false;
    }
    if source_is_endpoint {
        g.nodes[source].alive = false;
    }
    if let Some(last) = steps.last() {
        let t = last.to_node(g);
        if g.nodes[t].kind == NodeKind::Endpoint {
            g.nodes[t].alive = false;
        }
    }
    let mut visited: Vec<usize> = steps
        .iter()
        .flat_map(|s| [s.from_node(g), s.to_node(g)])
        .filter(|&v| g.nodes[v].alive && g.nodes[v].kind == NodeKind::Junction)
        .collect();
    visited.sort_unstable();
    visited.dedup();
    for v in visited {
        repair_junction(g, v);
    }
}

/// Collapse junction clusters connected by skeleton bridges shorter than the
/// local ink width into one junction node.
///
/// Thinning an oblique crossing often produces two Y-shaped junctions joined
/// by a short arc inside the shared ink blob instead of one X-shaped node.
/// Left alone, the pair defeats the degree rules during repair: after the
/// through-stroke is extracted, each Y sees a single survivor and pops an
/// endpoint where it should have reconnected the crossing. A bridge no
/// longer than twice the largest rib it touches lies inside the overlap
/// blob, so the arc and the far cluster are absorbed into one junction.
fn collapse_junction_bridges(g: &mut SkeletonGraph, field: &SkeletonField) {
    loop {
        let mut merged = false;
        for i in 0..g.arcs.len() {
            if !g.arcs[i].alive {
                continue;
            }
            let (a, b) = (g.arcs[i].a, g.arcs[i].b);
            if a == b
                || !g.nodes[a].alive
                || !g.nodes[b].alive
                || g.nodes[a].kind != NodeKind::Junction
                || g.nodes[b].kind != NodeKind::Junction
            {
                continue;
            }
            let max_rib = g.nodes[a]
                .pixels
                .iter()
                .chain(&g.nodes[b].pixels)
                .chain(&g.arcs[i].chain)
                .map(|&p| field.rib_px(p))
                .fold(0.0_f64, f64::max);
            if g.arcs[i].chain.len() as f64 > 2.0 * max_rib {
                continue;
            }
            let chain = std::mem::take(&mut g.arcs[i].chain);
            g.arcs[i].alive = false;
            let absorbed = std::mem::take(&mut g.nodes[b].pixels);
            g.nodes[b].alive = false;
            g.nodes[a].pixels.extend(chain);
            g.nodes[a].pixels.extend(absorbed);
            for arc in g.arcs.iter_mut().filter(|x| x.alive) {
                if arc.a == b {
                    arc.a = a;
                }
                if arc.b == b {
                    arc.b = a;
                }
            }
            // Parallel bridges between the merged pair are self-loops inside
            // the blob now; dissolve the short ones along with their pixels.
            for j in 0..g.arcs.len() {
                if j != i
                    && g.arcs[j].alive
                    && g.arcs[j].a == a
                    && g.arcs[j].b == a
                    && g.arcs[j].chain.len() as f64 <= 2.0 * max_rib
                {
                    let loop_chain = std::mem::take(&mut g.arcs[j].chain);
                    g.arcs[j].alive = false;
                    g.nodes[a].pixels.extend(loop_chain);
                }
            }
            let n = g.nodes[a].pixels.len() as f64;
            let cx = g.nodes[a].pixels.iter().map(|p| p.x as f64).sum::<f64>() / n;
            let cy = g.nodes[a].pixels.iter().map(|p| p.y as f64).sum::<f64>() / n;
            g.nodes[a].pos = Point::new(cx, cy);
            merged = true;
        }
        if !merged {
            break;
        }
    }
}

/// Fraction of strokes marked as segmentation errors.
pub fn segmentation_error_rate(marked_errors: usize, total_strokes: usize) -> Result<f64> {
    if total_strokes == 0 {
        return Err(Error::InvalidInput("error rate undefined for zero strokes".into()));
    }
    Ok(marked_errors as f64 / total_strokes as f64)
}

/// Is the pixel path a closed cycle (ends 8-adjacent)?
fn path_is_closed(pixels: &[Pixel]) -> bool {
    pixels.len() >= 3 && {
        let a = pixels[0];
        let b = pixels[pixels.len() - 1];
        (a.x - b.x).abs() <= 1 && (a.y - b.y).abs() <= 1
    }
}

/// Segment a skeleton field into strokes.
///
/// Runs the extract-and-repair recursion until no endpoint pair remains,
/// sweeps up single-endpoint and closed components, resolves each stroke's
/// ink boundary by nearest-skeleton region claiming, converts ribs to mm,
/// and drops strokes shorter than the configured minimum. Before filtering,
/// every skeleton pixel belongs to exactly one stroke.
pub fn segment_strokes(
    field: &SkeletonField,
    cfg: &SegmentationConfig,
    px_per_cm: f64,
) -> Vec<Stroke> {
    if field.skeleton.is_empty() {
        return Vec::new();
    }
    let mm_per_px = 10.0 / px_per_cm;
    let sigma = cfg.sigma_px.unwrap_or_else(|| {
        let mut ribs: Vec<f64> = field.skeleton.iter().map(|&p| field.rib_px(p)).collect();
        ribs.sort_by(f64::total_cmp);
        let median = ribs[ribs.len() / 2];
        (3.0 * median).max(1.0)
    });

    let mut g = build_skeleton_graph(field);
    collapse_junction_bridges(&mut g, field);
    let mut paths: Vec<(Vec<Pixel>, bool)> = Vec::new();

    while let Some(ex) = extract_optimal_stroke(&mut g, sigma) {
        paths.push((ex.pixels, false));
    }
    while let Some(pixels) = walk_next_or_none(&mut g, sigma) {
        let closed = path_is_closed(&pixels);
        paths.push((pixels, closed));
    }
    for cycle in std::mem::take(&mut g.closed_loops) {
        paths.push((cycle, true));
    }
    for dot in std::mem::take(&mut g.dots) {
        paths.push((vec![dot], true));
    }

    // Conservation sweep: hand any never-claimed node pixel to the nearest
    // stroke.
    let mut owned_sets: Vec<Vec<Pixel>> = paths.iter().map(|(p, _)| p.clone()).collect();
    let mut claimed: HashSet<Pixel> = owned_sets.iter().flatten().copied().collect();
    let mut stragglers: Vec<Pixel> = field
        .skeleton
        .iter()
        .copied()
        .filter(|p| !claimed.contains(p))
        .collect();
    stragglers.sort();
    for p in stragglers {
        let pt = Point::from_pixel(p);
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, set) in owned_sets.iter().enumerate() {
            for q in set {
                let d = pt.dist(Point::from_pixel(*q));
                if d < best.0 - 1e-12 {
                    best = (d, i);
                }
            }
        }
        if best.1 != usize::MAX {
            owned_sets[best.1].push(p);
            claimed.insert(p);
        }
    }

    // Claim ink regions per stroke (multi-source BFS over the mask) and
    // trace each region's outline.
    let ink = field.ink_mask();
    let regions = claim_ink_regions(&ink, &owned_sets);

    let mut strokes = Vec::new();
    for (i, (path, closed)) in paths.into_iter().enumerate() {
        let ribs_mm: Vec<f64> = path.iter().map(|&p| field.rib_px(p) * mm_per_px).collect();
        let boundary = trace_region_boundary(&regions, i as u32, &path);
        strokes.push(Stroke {
            id: i,
            source_id: String::new(),
            skeleton: path,
            closed,
            boundary,
            ribs_mm,
            owned: owned_sets[i].clone(),
        });
    }

    // Length filter, then stable re-numbering.
    strokes.retain(|s| s.length_px() * mm_per_px >= cfg.min_stroke_len_mm);
    for (i, s) in strokes.iter_mut().enumerate() {
        s.id = i;
    }
    strokes
}

/// Assign every ink pixel to the stroke whose skeleton reaches it first in a
/// multi-source BFS (8-connected); deterministic: seeds enqueue in stroke
/// order, ties resolve to the earlier stroke.
fn claim_ink_regions(ink: &Grid<bool>, owned: &[Vec<Pixel>]) -> Grid<u32> {
    const UNCLAIMED: u32 = u32::MAX;
    let mut owner = Grid::filled(ink.width(), ink.height(), UNCLAIMED);
    let mut queue = std::collections::VecDeque::new();
    for (i, set) in owned.iter().enumerate() {
        let mut seeds = set.clone();
        seeds.sort();
        for p in seeds {
            if ink.is_set(p.x, p.y) && *owner.at(p).unwrap() == UNCLAIMED {
                owner.set(p, i as u32);
                queue.push_back(p);
            }
        }
    }
    while let Some(p) = queue.pop_front() {
        let id = *owner.at(p).unwrap();
        for q in p.neighbors8() {
            if ink.is_set(q.x, q.y) && *owner.at(q).unwrap() == UNCLAIMED {
                owner.set(q, id);
                queue.push_back(q);
            }
        }
    }
    owner
}

/// Moore contour trace of stroke `id`'s region; when the region is split
/// into several blobs, the one containing the most skeleton pixels wins.
fn trace_region_boundary(owner: &Grid<u32>, id: u32, skeleton: &[Pixel]) -> Vec<Pixel> {
    let mut region = Grid::filled(owner.width(), owner.height(), false);
    let mut any = false;
    for (p, &v) in owner.iter_cells() {
        if v == id {
            region.set(p, true);
            any = true;
        }
    }
    if !any {
        return Vec::new();
    }
    let comps = connected_components(&region);
    let comp = if comps.len() == 1 {
        &comps[0]
    } else {
        let sk: HashSet<Pixel> = skeleton.iter().copied().collect();
        comps
            .iter()
            .max_by_key(|c| (c.iter().filter(|p| sk.contains(p)).count(), std::cmp::Reverse(c[0])))
            .unwrap()
    };
    let mut blob = Grid::filled(owner.width(), owner.height(), false);
    for &p in comp {
        blob.set(p, true);
    }
    moore_trace(&blob, comp[0])
}

/// Moore-neighbor contour tracing from the top-left region pixel, walking
/// clockwise. The walk is deterministic in (pixel, backtrack direction), so
/// it stops at the first repeated state: that closes the loop exactly once,
/// on any blob shape.
fn moore_trace(blob: &Grid<bool>, start: Pixel) -> Vec<Pixel> {
    if blob.count_true() == 1 {
        return vec![start];
    }
    // Clockwise neighbor order starting from west.
    const DIRS: [(i32, i32); 8] =
        [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];
    let mut contour = Vec::new();
    let mut cur = start;
    // Entered the start pixel "from the west" (scan order guarantees the
    // west neighbor is background).
    let mut backtrack = 0usize; // index into DIRS pointing at the background we came from
    let mut seen_states: HashSet<(Pixel, usize)> = HashSet::new();
    loop {
        if !seen_states.insert((cur, backtrack)) {
            break; // the loop has closed
        }
        contour.push(cur);
        // Search clockwise from the backtrack direction for the next ink
        // pixel.
        let mut found = None;
        for k in 1..=8 {
            let di = (backtrack + k) % 8;
            let (dx, dy) = DIRS[di];
            let q = Pixel::new(cur.x + dx, cur.y + dy);
            if blob.is_set(q.x, q.y) {
                // New backtrack: the direction pointing back at the
                // previous background cell, i.e. one step counter-clockwise
                // from where we found ink.
                found = Some((q, (di + 8 - 1) % 8));
                break;
            }
        }
        let (next, came_from_bg) = match found {
            Some(x) => x,
            None => break, // isolated pixel, handled above, defensive here
        };
        // The backtrack index for the next pixel: direction from `next`
        // back toward the last background cell we tested. Standard Moore:
        // backtrack = direction of (cur_background) as seen from next. We
        // approximate with the inverse neighbor search start; this keeps
        // the trace on the outer contour.
        let (dx, dy) = DIRS[came_from_bg];
        let bg = Pixel::new(cur.x + dx, cur.y + dy);
        backtrack = DIRS
            .iter()
            .position(|&(ex, ey)| (next.x + ex, next.y + ey) == (bg.x, bg.y))
            .unwrap_or((came_from_bg + 4) % 8);
        cur = next;
    }
    contour
}
