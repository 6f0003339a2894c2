use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::Serialize;

use super::graph::{scc_of, BallQuery, ChainGraph, Landing};
use super::grid::{Axis, GridWindow};
use crate::algebra::Element;
use crate::error::Result;
use crate::group::{signed_angle, Conjugation, SemidirectGroup, SemidirectPoint};
use crate::lcs::ControlSystem;
use crate::spectral::spectral_split;

/// A strongly connected component that passes the filters of
/// [`extract_chain_sets`].
#[derive(Debug, Clone, Serialize)]
pub struct ChainSet {
    pub nodes: Vec<u64>,
    pub internal_edges: usize,
    /// `max |x^i|` over member centers, one entry per level.
    pub level_extents: Vec<f64>,
    /// Per-axis range of member centers (periodic axes in `[-pi, pi)`).
    pub hull_lo: Vec<f64>,
    pub hull_hi: Vec<f64>,
    /// Interval axes on which some member sits in the outer cell layer.
    pub boundary_axes: Vec<usize>,
    pub contains_identity: bool,
    pub contains_central_fiber: bool,
    pub fiber_fraction: f64,
}

impl ChainSet {
    pub fn touches_boundary(&self) -> bool {
        !self.boundary_axes.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.nodes.binary_search(&id).is_ok()
    }
}

/// Copy of `x` with periodic coordinates moved to `[-pi, pi)`.
pub fn signed_coordinates(group: &SemidirectGroup, x: &Element) -> Element {
    let mut y = x.clone();
    for &p in group.periodic() {
        y[p] = signed_angle(y[p]);
    }
    y
}

/// `|x^i|` for every level of the central series.
pub fn level_norms(group: &SemidirectGroup, x: &Element) -> Vec<f64> {
    let s = signed_coordinates(group, x);
    let cs = group.algebra().series();
    (1..=cs.class()).map(|i| cs.component(&s, i).norm()).collect()
}

fn max_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a = a.max(*b);
    }
}

/// SCCs ordered by smallest member, kept when they have an internal edge
/// between distinct nodes and some sampled trajectory from a member ends in
/// a member cell without a jump. The second test drops fringe components
/// held together only by jumps.
pub fn extract_chain_sets(group: &SemidirectGroup, graph: &ChainGraph) -> Vec<ChainSet> {
    let window = &graph.window;
    let comps = scc_of(&graph.active_nodes(), graph.edges.iter().map(|e| (e.from, e.to)));
    let mut owner: HashMap<u64, usize> = HashMap::new();
    for (c, nodes) in comps.iter().enumerate() {
        for n in nodes {
            owner.insert(*n, c);
        }
    }
    let mut internal = vec![0usize; comps.len()];
    let mut resident = vec![false; comps.len()];
    for e in &graph.edges {
        let (a, b) = (owner[&e.from], owner[&e.to]);
        if a == b {
            if e.from != e.to {
                internal[a] += 1;
            }
            resident[a] |= e.direct;
        }
    }
    let fiber = window.central_fiber();
    let identity = window.identity_cell();
    comps
        .into_iter()
        .zip(internal.into_iter().zip(resident))
        .filter(|(_, (k, r))| *k > 0 && *r)
        .map(|(nodes, (k, _))| describe(group, window, nodes, k, &fiber, identity))
        .collect()
}

fn describe(
    group: &SemidirectGroup,
    window: &GridWindow,
    nodes: Vec<u64>,
    internal_edges: usize,
    fiber: &[u64],
    identity: Option<u64>,
) -> ChainSet {
    let axes = window.axes();
    let mut extents = vec![0.0; group.algebra().class()];
    let mut lo = vec![f64::INFINITY; axes.len()];
    let mut hi = vec![f64::NEG_INFINITY; axes.len()];
    let mut boundary = vec![false; axes.len()];
    for &id in &nodes {
        let c = window.center(id);
        max_into(&mut extents, &level_norms(group, &c.x));
        for (ax, v) in window.center_coords(id).into_iter().enumerate() {
            let v = if axes[ax].is_periodic() { signed_angle(v) } else { v };
            lo[ax] = lo[ax].min(v);
            hi[ax] = hi[ax].max(v);
        }
        for ax in window.boundary_axes(id) {
            boundary[ax] = true;
        }
    }
    let inside = fiber.iter().filter(|f| nodes.binary_search(f).is_ok()).count();
    let fiber_fraction = if fiber.is_empty() { 0.0 } else { inside as f64 / fiber.len() as f64 };
    ChainSet {
        contains_identity: identity.is_some_and(|i| nodes.binary_search(&i).is_ok()),
        contains_central_fiber: !fiber.is_empty() && inside == fiber.len(),
        fiber_fraction,
        internal_edges,
        level_extents: extents,
        hull_lo: lo,
        hull_hi: hi,
        boundary_axes: boundary.iter().enumerate().filter(|(_, b)| **b).map(|(ax, _)| ax).collect(),
        nodes,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Hypotheses of the uniqueness result do not hold.
    NotApplicable,
}

/// Facts about the system needed to judge the extracted sets.
#[derive(Debug, Clone)]
pub struct VerifyContext {
    /// Whether the zero-spectrum part of `D` lies in the periodic span.
    pub g0_compact: bool,
    /// Axes (window numbering) along which `G^0` is unbounded.
    pub unbounded_axes: Vec<usize>,
    pub bounds: Option<Vec<f64>>,
    /// The window was derived from `bounds`, so touching its edge is a failure.
    pub bound_window: bool,
}

impl VerifyContext {
    /// Classifies `G^0` from the spectrum of `D`.
    pub fn from_system(sys: &ControlSystem, window: &GridWindow) -> Result<Self> {
        let group = sys.group();
        let split = spectral_split(sys.flow().d())?;
        let n = group.dim();
        let mut per = DMatrix::<f64>::zeros(n, group.periodic().len());
        for (c, &p) in group.periodic().iter().enumerate() {
            per[(p, c)] = 1.0;
        }
        let z = &split.zero;
        // component of the zero space outside the periodic span
        let out = z - &per * (per.transpose() * z);
        let mut unbounded = Vec::new();
        let m = window.torus_dim();
        for k in 0..n {
            if out.row(k).amax() > 1e-8 && !group.is_periodic(k) {
                unbounded.push(m + k);
            }
        }
        Ok(VerifyContext {
            g0_compact: out.iter().all(|v| v.abs() <= 1e-8),
            unbounded_axes: unbounded,
            bounds: None,
            bound_window: false,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub verdict: Verdict,
    pub set_count: usize,
    pub unique: bool,
    pub contains_identity: bool,
    pub fiber_nodes: usize,
    pub fiber_contained: usize,
    pub extents: Vec<f64>,
    pub bounds: Option<Vec<f64>>,
    pub extents_within_bounds: Option<bool>,
    pub boundary_axes: Vec<usize>,
    pub failures: Vec<String>,
    pub diagnostics: Vec<String>,
}

/// The set meeting the most fiber nodes, ties broken by size.
pub fn main_set_index(sets: &[ChainSet], central_fiber: &[u64]) -> Option<usize> {
    (0..sets.len()).max_by_key(|&k| {
        let s = &sets[k];
        (central_fiber.iter().filter(|f| s.contains(**f)).count(), s.nodes.len())
    })
}

/// Checks uniqueness, central-fiber containment, extents against bounds and
/// distance from the window edge.
pub fn verify_uniqueness_and_containment(
    sets: &[ChainSet],
    central_fiber: &[u64],
    ctx: &VerifyContext,
) -> VerificationReport {
    let mut failures = Vec::new();
    let mut diagnostics = Vec::new();
    let unique = sets.len() == 1;
    let main = main_set_index(sets, central_fiber).map(|k| &sets[k]);
    let fiber_contained = main.map_or(0, |s| central_fiber.iter().filter(|f| s.contains(**f)).count());
    let extents = main.map(|s| s.level_extents.clone()).unwrap_or_default();
    let boundary_axes = main.map(|s| s.boundary_axes.clone()).unwrap_or_default();
    if !unique {
        failures.push(format!("expected one chain set, found {}", sets.len()));
    }
    if central_fiber.is_empty() {
        failures.push("window does not contain the identity".into());
    } else if fiber_contained < central_fiber.len() {
        failures.push(format!(
            "central fiber: {fiber_contained} of {} nodes in the set",
            central_fiber.len()
        ));
    }
    let within = match (&ctx.bounds, main) {
        (Some(b), Some(_)) => {
            let ok = extents.iter().zip(b).all(|(e, b)| e <= b);
            if !ok {
                failures.push(format!("extents {extents:?} exceed bounds {b:?}"));
            }
            Some(ok)
        }
        _ => None,
    };
    if !boundary_axes.is_empty() {
        let msg = format!("chain set touches the window boundary on axes {boundary_axes:?}");
        if ctx.bound_window {
            failures.push(msg);
        } else {
            diagnostics.push(msg);
        }
    }
    let verdict = if !ctx.g0_compact {
        let hit: Vec<usize> = boundary_axes
            .iter()
            .copied()
            .filter(|a| ctx.unbounded_axes.contains(a))
            .collect();
        diagnostics.push(format!(
            "G0 is not compact: unbounded along axes {:?}; boundary reached along {:?}",
            ctx.unbounded_axes, hit
        ));
        Verdict::NotApplicable
    } else if failures.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    VerificationReport {
        verdict,
        set_count: sets.len(),
        unique,
        contains_identity: main.is_some_and(|s| s.contains_identity),
        fiber_nodes: central_fiber.len(),
        fiber_contained,
        extents,
        bounds: ctx.bounds.clone(),
        extents_within_bounds: within,
        boundary_axes,
        failures,
        diagnostics,
    }
}

/// Jump-point and trajectory-tube estimates for one chain set.
#[derive(Debug, Clone, Serialize)]
pub struct JumpTube {
    /// Grid estimate of the jump set (the chain set itself on a grid).
    pub jump_nodes: Vec<u64>,
    /// Extents over member centers and the landing points of internal edges.
    pub jump_extents: Vec<f64>,
    /// Extents over `phi([0, 2 tau], E, u)` for the sampled family.
    pub tube_extents: Vec<f64>,
    pub tube_samples: usize,
    /// Runs cut short by leaving the inflated window.
    pub tube_truncated: usize,
    /// Largest `|x'|` seen along the tube.
    pub field_bound: f64,
}

pub fn jump_and_tube_sets(sys: &ControlSystem, graph: &ChainGraph, set: &ChainSet) -> Result<JumpTube> {
    let group = sys.group();
    let window = &graph.window;
    let p = &graph.params;
    let mut lander = super::graph::Lander::new(sys, window, &p.controls, p.tau, &p.time_samples, p.eps)?;
    let levels = group.algebra().class();
    let mut jump = vec![0.0; levels];
    let mut tube = vec![0.0; levels];
    let mut samples = 0usize;
    let mut truncated = 0usize;
    let mut field_bound = 0.0_f64;
    for &id in &set.nodes {
        let c = window.center(id);
        let own = level_norms(group, &c.x);
        max_into(&mut jump, &own);
        max_into(&mut tube, &own);
        samples += 1;
        let internal: Vec<(u32, u32)> = graph
            .edges
            .iter()
            .skip(graph.edges.partition_point(|e| e.from < id))
            .take_while(|e| e.from == id)
            .filter(|e| set.contains(e.to))
            .map(|e| (e.control, e.time))
            .collect();
        for ci in 0..lander.control_count() {
            let u = nalgebra::DVector::from_row_slice(&p.controls[ci]);
            let mut local_tube = vec![0.0; levels];
            let mut local_jump = vec![0.0; levels];
            let mut fb = 0.0_f64;
            let mut count = 0usize;
            let stayed = lander.walk(id, ci, |_, l, slot, _| {
                let n = level_norms(group, &l.point.x);
                max_into(&mut local_tube, &n);
                count += 1;
                if let Some(ti) = slot {
                    if internal.contains(&(ci as u32, ti)) {
                        max_into(&mut local_jump, &n);
                    }
                }
                if let Ok((_, dx)) = sys.field_eval(&u, &l.point) {
                    fb = fb.max(dx.norm());
                }
            });
            if !stayed {
                truncated += 1;
            }
            samples += count;
            field_bound = field_bound.max(fb);
            max_into(&mut tube, &local_tube);
            max_into(&mut jump, &local_jump);
        }
    }
    Ok(JumpTube {
        jump_nodes: set.nodes.clone(),
        jump_extents: jump,
        tube_extents: tube,
        tube_samples: samples,
        tube_truncated: truncated,
        field_bound,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InclusionReport {
    pub checked: usize,
    pub failures: usize,
    pub radius: f64,
    /// Nodes whose image leaves the downstairs window entirely.
    pub outside_window: usize,
}

impl InclusionReport {
    pub fn holds(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

/// Whether `psi` maps every node of `up` to within `radius` of some node of
/// `down`.
pub fn image_inclusion(
    conj: &Conjugation,
    up_window: &GridWindow,
    up: &ChainSet,
    down_group: &SemidirectGroup,
    down_window: &GridWindow,
    down: &ChainSet,
    radius: f64,
) -> InclusionReport {
    let mut query = BallQuery::new(down_group, down_window);
    let mut failures = 0;
    let mut outside = 0;
    for &id in &up.nodes {
        let img: SemidirectPoint = conj.psi(&up_window.center(id));
        let l = Landing::at(down_group, img);
        let near = query.ball(&l, radius);
        if near.is_empty() {
            outside += 1;
        }
        if !near.iter().any(|n| down.contains(*n)) {
            failures += 1;
        }
    }
    InclusionReport {
        checked: up.nodes.len(),
        failures,
        radius,
        outside_window: outside,
    }
}

/// Interval-axis extents `[lo, hi]` of a set, for reporting.
pub fn interval_hull(window: &GridWindow, set: &ChainSet) -> Vec<Option<(f64, f64)>> {
    window
        .axes()
        .iter()
        .enumerate()
        .map(|(ax, a)| match a {
            Axis::Interval { .. } => Some((set.hull_lo[ax], set.hull_hi[ax])),
            Axis::Periodic { .. } => None,
        })
        .collect()
}
