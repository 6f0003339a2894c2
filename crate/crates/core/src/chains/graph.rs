use nalgebra::{DMatrix, DVector};
use petgraph::graph::{DiGraph, NodeIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::grid::GridWindow;
use crate::algebra::{BchScratch, Element};
use crate::error::{Error, Result};
use crate::group::{signed_angle, wrap_angle, SemidirectGroup, SemidirectPoint};
use crate::lcs::{ControlFunction, ControlSystem};

/// Base trajectories are sampled this many times per `tau`.
pub const SAMPLES_PER_TAU: usize = 30;
/// Largest number of re-integrated edges per graph.
pub const AUDIT_CAP: usize = 500;

/// Sampled control family and timing of an `(eps, tau)` graph.
#[derive(Debug, Clone, Serialize)]
pub struct GraphParams {
    pub eps: f64,
    pub tau: f64,
    /// Landing times, inside `[tau, 2 tau]`.
    pub time_samples: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
}

impl GraphParams {
    /// Box center, vertices and face midpoints; `count` times `tau (1 + j / (count - 1))`.
    pub fn standard(sys: &ControlSystem, eps: f64, tau: f64, count: usize) -> Result<Self> {
        let count = count.max(1);
        let time_samples = if count == 1 {
            vec![tau]
        } else {
            (0..count)
                .map(|j| tau * (1.0 + j as f64 / (count - 1) as f64))
                .collect()
        };
        let controls = sys
            .omega()
            .sample_family()
            .into_iter()
            .map(|u| u.iter().copied().collect())
            .collect();
        let p = GraphParams {
            eps,
            tau,
            time_samples,
            controls,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !(self.tau > 0.0) {
            return Err(Error::InvalidArgument("eps and tau must be positive".into()));
        }
        if self.controls.is_empty() {
            return Err(Error::NoControls);
        }
        if self.time_samples.is_empty()
            || self
                .time_samples
                .iter()
                .any(|t| *t < self.tau * (1.0 - 1e-12) || *t > 2.0 * self.tau * (1.0 + 1e-12))
        {
            return Err(Error::InvalidArgument("time samples must lie in [tau, 2 tau]".into()));
        }
        Ok(())
    }
}

/// Directed edge with its witness `(control index, time index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub from: u64,
    pub to: u64,
    pub control: u32,
    pub time: u32,
    /// Some sampled landing from `from` lies inside the cell of `to`
    /// (no jump needed).
    pub direct: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AuditReport {
    pub checked: usize,
    pub failures: usize,
    pub max_excess: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainGraph {
    pub window: GridWindow,
    pub params: GraphParams,
    pub edges: Vec<Edge>,
    /// `(node, control)` runs cut short by leaving the inflated window.
    pub truncated: u64,
    pub audit: AuditReport,
}

impl ChainGraph {
    pub fn acceptance_radius(&self) -> f64 {
        self.params.eps + self.window.delta() / 2.0
    }

    /// Sorted ids of nodes incident to at least one edge.
    pub fn active_nodes(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.edges.iter().flat_map(|e| [e.from, e.to]).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn has_edge(&self, from: u64, to: u64) -> bool {
        // edges are sorted by (from, to)
        self.edges
            .binary_search_by(|e| (e.from, e.to).cmp(&(from, to)))
            .is_ok()
    }
}

struct BaseSample {
    time: f64,
    landing: Option<u32>,
    x: Element,
    h: DVector<f64>,
    /// `rho(h_b) e^{sD}`.
    push: DMatrix<f64>,
    /// `rho(-h_b)`, absent when the action is trivial.
    rho_inv: Option<DMatrix<f64>>,
}

/// Closed-form evaluation of `phi(s, g, u) = phi(s, e, u) phi_s(g)` for the
/// constant controls of a graph, plus ball queries on the grid.
pub struct Lander<'a> {
    sys: &'a ControlSystem,
    window: &'a GridWindow,
    bases: Vec<Vec<BaseSample>>,
    margins: Vec<f64>,
    torus_rho_inv: Vec<DMatrix<f64>>,
    scratch: BchScratch,
    query: BallQuery<'a>,
}

/// A group point with `rho(-h)` cached, ready for ball queries.
pub struct Landing {
    pub point: SemidirectPoint,
    rho_inv: Option<DMatrix<f64>>,
}

impl Landing {
    pub fn at(group: &SemidirectGroup, point: SemidirectPoint) -> Self {
        let rho_inv = (!group.rho_is_trivial()).then(|| group.rho(&-&point.h));
        Landing { point, rho_inv }
    }
}

/// Finds grid centers within a radius of a point.
pub struct BallQuery<'a> {
    group: &'a SemidirectGroup,
    window: &'a GridWindow,
    scratch: BchScratch,
    tmp: Element,
}

impl<'a> BallQuery<'a> {
    pub fn new(group: &'a SemidirectGroup, window: &'a GridWindow) -> Self {
        BallQuery {
            group,
            window,
            scratch: BchScratch::new(group.dim()),
            tmp: Element::zeros(group.dim()),
        }
    }

    /// `d(L, c)` for the landing `L` and grid point `c`.
    pub fn distance(&mut self, l: &Landing, c: &SemidirectPoint) -> f64 {
        let group = self.group;
        let dh = l
            .point
            .h
            .iter()
            .zip(c.h.iter())
            .map(|(a, b)| signed_angle(b - a).powi(2))
            .sum::<f64>()
            .sqrt();
        let neg: Element = -&l.point.x;
        group
            .algebra()
            .bch_into(neg.as_slice(), c.x.as_slice(), self.tmp.as_mut_slice(), &mut self.scratch);
        let mut z = match &l.rho_inv {
            Some(r) => r * &self.tmp,
            None => self.tmp.clone(),
        };
        for &p in group.periodic() {
            z[p] = signed_angle(z[p]);
        }
        dh + z.norm()
    }

    /// Grid cells whose center is within `radius` of the landing, ascending.
    ///
    /// Candidates come from a box: `(-x) * c` is linear in `c - x` up to
    /// the Jacobian `I + ad_x / 2 + ad_x^2 / 12` and a quadratic remainder.
    pub fn ball(&mut self, l: &Landing, radius: f64) -> Vec<u64> {
        let group = self.group;
        let alg = group.algebra();
        let n = group.dim();
        let m = self.window.torus_dim();
        let x = &l.point.x;
        let class = alg.class();
        let s = alg.constants().bracket_norm_bound();
        let r_img = group.rho_norm_bound() * radius;
        let xn = x.norm();
        let ad = alg.ad(x);
        let mut jac = DMatrix::<f64>::identity(n, n);
        if class >= 2 {
            jac += &ad * 0.5;
        }
        if class >= 3 {
            jac += &ad * &ad / 12.0;
        }
        let mut rem = 0.0;
        if class >= 3 {
            rem += s * s * xn / 12.0;
        }
        if class >= 4 {
            rem += s * s * s * xn * xn / 24.0;
        }
        rem *= r_img * r_img;
        let mut ranges: Vec<Vec<usize>> = Vec::with_capacity(m + n);
        for a in 0..m {
            let c = l.point.h[a];
            ranges.push(self.window.axes()[a].centers_within(c - radius, c + radius));
        }
        for k in 0..n {
            let spread = jac.row(k).norm() * r_img + rem + 1e-12;
            ranges.push(self.window.axes()[m + k].centers_within(x[k] - spread, x[k] + spread));
        }
        if ranges.iter().any(|r| r.is_empty()) {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut pos = vec![0usize; ranges.len()];
        let mut idx: Vec<usize> = ranges.iter().map(|r| r[0]).collect();
        loop {
            let id = self.window.index_of(&idx);
            let c = self.window.center(id);
            if self.distance(l, &c) < radius {
                out.push(id);
            }
            let mut ax = 0;
            loop {
                if ax == ranges.len() {
                    out.sort_unstable();
                    return out;
                }
                pos[ax] += 1;
                if pos[ax] < ranges[ax].len() {
                    idx[ax] = ranges[ax][pos[ax]];
                    break;
                }
                pos[ax] = 0;
                idx[ax] = ranges[ax][0];
                ax += 1;
            }
        }
    }
}

impl<'a> Lander<'a> {
    /// Samples base trajectories at `k tau / 30` for `k = 1..=60` together
    /// with `landings` (times in `(0, 2 tau]`).
    pub fn new(
        sys: &'a ControlSystem,
        window: &'a GridWindow,
        controls: &[Vec<f64>],
        tau: f64,
        landings: &[f64],
        eps: f64,
    ) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::NoControls);
        }
        let g = sys.group();
        let mut times: Vec<(f64, Option<u32>)> = (1..=2 * SAMPLES_PER_TAU)
            .map(|k| (tau * k as f64 / SAMPLES_PER_TAU as f64, None))
            .collect();
        for (j, t) in landings.iter().enumerate() {
            match times.iter_mut().find(|(s, l)| (s - t).abs() <= 1e-12 * tau && l.is_none()) {
                Some(slot) => slot.1 = Some(j as u32),
                None => times.push((*t, Some(j as u32))),
            }
        }
        times.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let ts: Vec<f64> = times.iter().map(|t| t.0).collect();
        let mut bases = Vec::with_capacity(controls.len());
        for u in controls {
            let u = DVector::from_row_slice(u);
            let last = *ts.last().expect("sample times");
            let ctl = ControlFunction::constant(u, 0.0, last)?;
            let pts = sys.sample_fixed(&g.identity(), &ctl, &ts, |_| true)?;
            let mut run = Vec::with_capacity(pts.len());
            for ((s, landing), p) in times.iter().zip(pts) {
                let e = sys.flow().exp_d(*s);
                let (push, rho_inv) = if g.rho_is_trivial() {
                    (e, None)
                } else {
                    (g.rho(&p.h) * e, Some(g.rho(&-&p.h)))
                };
                run.push(BaseSample {
                    time: *s,
                    landing: *landing,
                    x: p.x,
                    h: p.h,
                    push,
                    rho_inv,
                });
            }
            bases.push(run);
        }
        let m = window.torus_dim();
        let torus_rho_inv = if g.rho_is_trivial() || m == 0 {
            Vec::new()
        } else {
            let cells: Vec<usize> = window.axes()[..m].iter().map(|a| a.cells()).collect();
            let total: usize = cells.iter().product();
            (0..total)
                .map(|combo| {
                    let mut rem = combo;
                    let h = DVector::from_fn(m, |a, _| {
                        let k = rem % cells[a];
                        rem /= cells[a];
                        -window.axes()[a].center(k)
                    });
                    g.rho(&h)
                })
                .collect()
        };
        Ok(Lander {
            sys,
            window,
            bases,
            margins: window.margins(eps),
            torus_rho_inv,
            scratch: BchScratch::new(g.dim()),
            query: BallQuery::new(g, window),
        })
    }

    fn torus_combo(&self, idx: &[usize]) -> usize {
        let m = self.window.torus_dim();
        let mut combo = 0;
        let mut stride = 1;
        for a in 0..m {
            combo += idx[a] * stride;
            stride *= self.window.axes()[a].cells();
        }
        combo
    }

    pub fn control_count(&self) -> usize {
        self.bases.len()
    }

    pub fn margins(&self) -> &[f64] {
        &self.margins
    }

    /// Walks the samples of control `ci` from `g`; calls `visit(point,
    /// landing index or None, time)` while the run stays inside the inflated
    /// window. Returns `false` if it left the window.
    pub fn walk(
        &mut self,
        id: u64,
        ci: usize,
        mut visit: impl FnMut(&mut Self, Landing, Option<u32>, f64),
    ) -> bool {
        let g = self.window.center(id);
        let idx = self.window.multi_index(id);
        let rho_g = if self.torus_rho_inv.is_empty() {
            None
        } else {
            Some(self.torus_combo(&idx))
        };
        let group = self.sys.group();
        let speeds = self.sys.flow().speeds().clone();
        for k in 0..self.bases[ci].len() {
            let (s, landing, x, rho_inv) = {
                let b = &self.bases[ci][k];
                let y = &b.push * &g.x;
                let mut x = Element::zeros(group.dim());
                group
                    .algebra()
                    .bch_into(b.x.as_slice(), y.as_slice(), x.as_mut_slice(), &mut self.scratch);
                for &p in group.periodic() {
                    x[p] = wrap_angle(x[p]);
                }
                let rho_inv = match (&b.rho_inv, rho_g) {
                    (Some(rb), Some(c)) => Some(rb * &self.torus_rho_inv[c]),
                    _ => None,
                };
                (b.time, b.landing, x, rho_inv)
            };
            if !self.window.inside_inflated(x.as_slice(), &self.margins) {
                return false;
            }
            let b = &self.bases[ci][k];
            let mut h = &b.h + &g.h + &speeds * s;
            h.iter_mut().for_each(|a| *a = wrap_angle(*a));
            let point = SemidirectPoint::new(h, x);
            visit(self, Landing { point, rho_inv }, landing, s);
        }
        true
    }

    pub fn distance(&mut self, l: &Landing, c: &SemidirectPoint) -> f64 {
        self.query.distance(l, c)
    }

    pub fn ball(&mut self, l: &Landing, radius: f64) -> Vec<u64> {
        self.query.ball(l, radius)
    }
}

/// Builds the `(eps, tau)` reachability graph on `window`; edges are sorted
/// by `(from, to)` and keep the first witness found.
pub fn build_chain_graph(
    sys: &ControlSystem,
    window: &GridWindow,
    params: &GraphParams,
    audit_seed: u64,
) -> Result<ChainGraph> {
    params.validate()?;
    if window.node_count() == 0 {
        return Err(Error::EmptyWindow);
    }
    for u in &params.controls {
        let v = DVector::from_row_slice(u);
        if !sys.omega().contains(&v) {
            return Err(Error::ControlOutOfRange(u.clone()));
        }
    }
    let mut lander = Lander::new(sys, window, &params.controls, params.tau, &params.time_samples, params.eps)?;
    let radius = params.eps + window.delta() / 2.0;
    let mut edges: Vec<Edge> = Vec::new();
    let mut truncated = 0u64;
    let mut local: Vec<Edge> = Vec::new();
    for id in 0..window.node_count() {
        local.clear();
        for ci in 0..lander.control_count() {
            let stayed = lander.walk(id, ci, |ld, landing, slot, _| {
                if let Some(ti) = slot {
                    let home = ld.window.locate(&landing.point);
                    for to in ld.ball(&landing, radius) {
                        local.push(Edge {
                            from: id,
                            to,
                            control: ci as u32,
                            time: ti,
                            direct: home == Some(to),
                        });
                    }
                }
            });
            if !stayed {
                truncated += 1;
            }
        }
        local.sort_by_key(|e| e.to);
        for e in &local {
            match edges.last_mut() {
                Some(last) if last.from == e.from && last.to == e.to => last.direct |= e.direct,
                _ => edges.push(*e),
            }
        }
    }
    let mut graph = ChainGraph {
        window: window.clone(),
        params: params.clone(),
        edges,
        truncated,
        audit: AuditReport::default(),
    };
    graph.audit = audit_edges(sys, &graph, audit_seed)?;
    Ok(graph)
}

/// Re-integrates a seeded 1% sample of the edges (at most `AUDIT_CAP`).
pub fn audit_edges(sys: &ControlSystem, graph: &ChainGraph, seed: u64) -> Result<AuditReport> {
    let tolerance = graph.acceptance_radius() + 1e-6;
    let total = graph.edges.len();
    if total == 0 {
        return Ok(AuditReport {
            tolerance,
            ..AuditReport::default()
        });
    }
    let count = total.div_ceil(100).min(AUDIT_CAP);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, total, count).into_vec();
    picks.sort_unstable();
    let mut report = AuditReport {
        checked: 0,
        failures: 0,
        max_excess: f64::NEG_INFINITY,
        tolerance,
    };
    for i in picks {
        let e = graph.edges[i];
        let t = graph.params.time_samples[e.time as usize];
        let u = DVector::from_row_slice(&graph.params.controls[e.control as usize]);
        let ctl = ControlFunction::constant(u, 0.0, t)?;
        let end = sys.solve(t, &graph.window.center(e.from), &ctl)?;
        let d = sys.group().distance(&end, &graph.window.center(e.to));
        report.checked += 1;
        report.max_excess = report.max_excess.max(d - graph.acceptance_radius());
        if d >= tolerance {
            report.failures += 1;
        }
    }
    Ok(report)
}

/// Strongly connected components; each sorted, ordered by smallest member.
pub fn strongly_connected_components(graph: &ChainGraph) -> Vec<Vec<u64>> {
    scc_of(&graph.active_nodes(), graph.edges.iter().map(|e| (e.from, e.to)))
}

pub(crate) fn scc_of(nodes: &[u64], edges: impl Iterator<Item = (u64, u64)>) -> Vec<Vec<u64>> {
    let mut g: DiGraph<u64, ()> = DiGraph::with_capacity(nodes.len(), 0);
    let idx: Vec<NodeIndex> = nodes.iter().map(|id| g.add_node(*id)).collect();
    let find = |id: u64| nodes.binary_search(&id).map(|k| idx[k]).ok();
    for (a, b) in edges {
        if let (Some(x), Some(y)) = (find(a), find(b)) {
            g.add_edge(x, y, ());
        }
    }
    let mut comps: Vec<Vec<u64>> = petgraph::algo::kosaraju_scc(&g)
        .into_iter()
        .map(|c| {
            let mut v: Vec<u64> = c.into_iter().map(|n| g[n]).collect();
            v.sort_unstable();
            v
        })
        .collect();
    comps.sort_by_key(|c| c[0]);
    comps
}
