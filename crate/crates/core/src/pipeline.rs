//! Orchestration of the subcommands on top of the library modules.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algebra::STRUCTURE_TOL;
use crate::chains::{
    build_chain_graph, estimate_bounds, extract_chain_sets, image_inclusion, jump_and_tube_sets, main_set_index,
    verify_uniqueness_and_containment, BoundEstimate, ChainGraph, ChainSet, GraphParams, GridWindow, InclusionReport,
    JumpTube, VerificationReport, Verdict, VerifyContext,
};
use crate::config::{
    AlgebraConfig, ChainConfig, CompactConfig, ConjugateConfig, ControlConfig, DerivationConfig, RunConfig,
};
use crate::error::{Error, Result};
use crate::group::{Conjugation, SemidirectPoint, ACTION_TOL, COMPAT_TOL};
use crate::lcs::{relative_error, ControlFunction, ControlSystem};
use crate::spectral::{
    block_decompose, eigenvalues, hyperbolic_constants, spectral_split, BLOCK_TOL, CLUSTER_TOL, INVARIANCE_TOL,
    KAPPA_STEP, LEIBNIZ_TOL,
};

/// Tolerance of the dual-solver comparison in `simulate`.
pub const CROSS_CHECK_TOL: f64 = 1e-6;
/// Tolerance of the eigenvalue match between `D` and the quotient.
pub const EIGEN_MATCH_TOL: f64 = 1e-9;
const SAMPLED_CHECKS: usize = 20;

#[derive(Debug, Clone, Serialize)]
pub struct Residual {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Named residuals, each compared against its tolerance with `<`.
#[derive(Debug, Clone, Default, Serialize)]
#[serde(transparent)]
pub struct ResidualTable(pub Vec<Residual>);

impl ResidualTable {
    pub fn push(&mut self, name: &str, value: f64, tolerance: f64) {
        self.0.push(Residual {
            name: name.into(),
            value,
            tolerance,
            pass: value < tolerance,
        });
    }

    /// Records a quantity that must not exceed `limit`.
    pub fn push_at_most(&mut self, name: &str, value: f64, limit: f64) {
        self.0.push(Residual {
            name: name.into(),
            value,
            tolerance: limit,
            pass: value <= limit,
        });
    }

    pub fn all_pass(&self) -> bool {
        self.0.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> Vec<&Residual> {
        self.0.iter().filter(|r| !r.pass).collect()
    }

    pub fn extend(&mut self, prefix: &str, other: ResidualTable) {
        for mut r in other.0 {
            r.name = format!("{prefix}{}", r.name);
            self.0.push(r);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    NotApplicable,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Pass | Outcome::NotApplicable => 0,
            Outcome::Fail => 3,
        }
    }
}

impl From<Verdict> for Outcome {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Pass => Outcome::Pass,
            Verdict::Fail => Outcome::Fail,
            Verdict::NotApplicable => Outcome::NotApplicable,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub level: usize,
    pub dim: usize,
    pub eigenvalues: Vec<[f64; 2]>,
    pub kappa: Option<f64>,
    pub mu: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionSummary {
    pub dim: usize,
    pub class: usize,
    pub level_dims: Vec<usize>,
    pub eigenvalues: Vec<[f64; 2]>,
    pub dim_plus: usize,
    pub dim_zero: usize,
    pub dim_minus: usize,
    pub hyperbolic: bool,
    pub g0_compact: bool,
    pub levels: Vec<LevelSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub t: f64,
    pub h: Vec<f64>,
    pub x: Vec<f64>,
    pub steps: usize,
    pub refinements: usize,
    pub est_error: f64,
    pub cross_check_deviation: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SetSummary {
    pub nodes: usize,
    pub internal_edges: usize,
    pub level_extents: Vec<f64>,
    pub hull_lo: Vec<f64>,
    pub hull_hi: Vec<f64>,
    pub boundary_axes: Vec<usize>,
    pub contains_identity: bool,
    pub contains_central_fiber: bool,
    pub fiber_fraction: f64,
}

impl From<&ChainSet> for SetSummary {
    fn from(s: &ChainSet) -> Self {
        SetSummary {
            nodes: s.nodes.len(),
            internal_edges: s.internal_edges,
            level_extents: s.level_extents.clone(),
            hull_lo: s.hull_lo.clone(),
            hull_hi: s.hull_hi.clone(),
            boundary_axes: s.boundary_axes.clone(),
            contains_identity: s.contains_identity,
            contains_central_fiber: s.contains_central_fiber,
            fiber_fraction: s.fiber_fraction,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TubeSummary {
    pub jump_nodes: usize,
    pub jump_extents: Vec<f64>,
    pub tube_extents: Vec<f64>,
    pub tube_samples: usize,
    pub tube_truncated: usize,
    pub field_bound: f64,
}

impl From<&JumpTube> for TubeSummary {
    fn from(j: &JumpTube) -> Self {
        TubeSummary {
            jump_nodes: j.jump_nodes.len(),
            jump_extents: j.jump_extents.clone(),
            tube_extents: j.tube_extents.clone(),
            tube_samples: j.tube_samples,
            tube_truncated: j.tube_truncated,
            field_bound: j.field_bound,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainSummary {
    pub params: GraphParams,
    pub delta: f64,
    pub window: GridWindow,
    pub window_from_bounds: bool,
    pub node_count: u64,
    pub edge_count: usize,
    pub truncated_runs: u64,
    pub audit: crate::chains::AuditReport,
    pub bounds: Option<BoundEstimate>,
    pub bounds_unavailable: Option<String>,
    pub sets: Vec<SetSummary>,
    pub verification: VerificationReport,
    pub tube: Option<TubeSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MappedPoint {
    pub up: Vec<f64>,
    pub down: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugationSummary {
    pub kernel_dim: usize,
    pub quotient_eigenvalues: Vec<[f64; 2]>,
    pub nonzero_eigenvalues: Vec<[f64; 2]>,
    pub eigenvalue_deviation: f64,
    pub downstairs_config: String,
    pub mapped_samples: Vec<MappedPoint>,
    pub upstairs: ChainSummary,
    pub downstairs: ChainSummary,
    pub inclusion: InclusionReport,
}

/// Deterministic report body; timings are kept separately.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub name: String,
    pub schema_version: u32,
    pub seed: u64,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<DecompositionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conjugation: Option<ConjugationSummary>,
    pub residuals: ResidualTable,
    pub notes: Vec<String>,
}

impl RunReport {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        RunReport {
            command: command.into(),
            name: cfg.name.clone(),
            schema_version: cfg.schema_version,
            seed: cfg.seed,
            outcome: Outcome::Pass,
            decomposition: None,
            simulation: None,
            chain: None,
            conjugation: None,
            residuals: ResidualTable::default(),
            notes: Vec::new(),
        }
    }

    /// Exit code: 2 when a residual fails, 3 for a failed theorem check.
    pub fn exit_code(&self) -> i32 {
        if !self.residuals.all_pass() {
            2
        } else {
            self.outcome.exit_code()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, Serialize)]
#[serde(transparent)]
pub struct Timings(pub BTreeMap<String, f64>);

impl Timings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.0.entry(stage.into()).or_insert(0.0) += start.elapsed().as_secs_f64();
        out
    }
}

/// Files a command produces besides the report.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub trajectory: Option<Vec<(f64, SemidirectPoint)>>,
    pub chain: Option<ChainArtifacts>,
    pub downstairs: Option<(String, ChainArtifacts)>,
    pub mapping: Vec<MappedPoint>,
}

#[derive(Debug)]
pub struct ChainArtifacts {
    pub graph: ChainGraph,
    pub sets: Vec<ChainSet>,
}

pub struct RunOutput {
    pub report: RunReport,
    pub timings: Timings,
    pub artifacts: Artifacts,
}

fn complex_pairs(ev: &[nalgebra::Complex<f64>]) -> Vec<[f64; 2]> {
    ev.iter().map(|z| [z.re, z.im]).collect()
}

/// Residuals of every structural check on the configured system.
pub fn system_residuals(sys: &ControlSystem, seed: u64) -> ResidualTable {
    let mut t = ResidualTable::default();
    let group = sys.group();
    let sc = group.algebra().constants();
    t.push("antisymmetry", sc.antisymmetry_residual(), STRUCTURE_TOL);
    t.push("jacobi", sc.jacobi_residual(), STRUCTURE_TOL);
    let der = sys.flow().derivation();
    t.push("leibniz", der.leibniz_residual(), LEIBNIZ_TOL);
    t.push("series_preserved", der.series_residual(), BLOCK_TOL);
    t.push("flow_action_compatibility", sys.flow().compatibility_residual(), COMPAT_TOL);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut assoc, mut auto, mut act) = (0.0_f64, 0.0_f64, 0.0_f64);
    for k in 0..SAMPLED_CHECKS {
        let a = group.random_point(&mut rng, 1.0);
        let b = group.random_point(&mut rng, 1.0);
        let c = group.random_point(&mut rng, 1.0);
        assoc = assoc.max(group.associativity_residual(&a, &b, &c));
        let t_k = 0.1 * k as f64;
        auto = auto.max(sys.flow().automorphism_residual(group, t_k, &a, &b));
        act = act.max(group.action_automorphism_residual(&a.h, &b.x, &c.x));
    }
    t.push("group_associativity", assoc, 1e-9);
    t.push("flow_automorphism", auto, 1e-8);
    t.push("action_automorphism", act, ACTION_TOL);
    t
}

pub fn decomposition_summary(sys: &ControlSystem) -> Result<(DecompositionSummary, ResidualTable)> {
    let d = sys.flow().d();
    let cs = sys.algebra().series();
    let mut res = ResidualTable::default();
    let split = spectral_split(d)?;
    res.push("spectral_invariance", split.invariance_residual, INVARIANCE_TOL);
    res.push("stable_unstable_subalgebras", split.subalgebra_residual(sys.algebra().constants()), 1e-8);
    let blocks = block_decompose(d, cs)?;
    res.push("block_upper_triangular", blocks.upper_residual(), BLOCK_TOL);
    let mut levels = Vec::with_capacity(cs.class());
    for i in 1..=cs.class() {
        let a = blocks.diagonal(i);
        let ev = eigenvalues(a)?;
        let (kappa, mu, note) = match hyperbolic_constants(a, None) {
            Ok(lc) => {
                res.push_at_most(&format!("kappa_fit_level_{i}"), lc.violation(a, KAPPA_STEP / 10.0), 0.0);
                (Some(lc.kappa), Some(lc.mu), None)
            }
            Err(e) => (None, None, Some(e.to_string())),
        };
        levels.push(LevelSummary {
            level: i,
            dim: a.nrows(),
            eigenvalues: complex_pairs(&ev),
            kappa,
            mu,
            note,
        });
    }
    let (p, z, m) = split.dims();
    let window = GridWindow::new(
        sys.group(),
        1,
        &vec![-1.0; sys.group().dim()],
        &vec![1.0; sys.group().dim()],
        1.0,
    )?;
    let g0_compact = VerifyContext::from_system(sys, &window)?.g0_compact;
    Ok((
        DecompositionSummary {
            dim: sys.group().dim(),
            class: cs.class(),
            level_dims: cs.level_dims(),
            eigenvalues: complex_pairs(&split.eigenvalues),
            dim_plus: p,
            dim_zero: z,
            dim_minus: m,
            hyperbolic: split.is_hyperbolic(),
            g0_compact,
            levels,
        },
        res,
    ))
}

pub fn cmd_decompose(cfg: &RunConfig) -> Result<RunOutput> {
    let mut timings = Timings::default();
    let sys = timings.time("build", || cfg.system())?;
    let mut report = RunReport::new("decompose", cfg);
    report.residuals = system_residuals(&sys, cfg.seed);
    let (summary, res) = timings.time("decompose", || decomposition_summary(&sys))?;
    report.residuals.extend("", res);
    report.decomposition = Some(summary);
    Ok(RunOutput {
        report,
        timings,
        artifacts: Artifacts::default(),
    })
}

fn control_of(sim: &crate::config::SimulateConfig) -> Result<ControlFunction> {
    let times = if sim.times.is_empty() {
        vec![0.0, sim.t]
    } else {
        sim.times.clone()
    };
    let values = sim.values.iter().map(|v| DVector::from_row_slice(v)).collect();
    ControlFunction::new(times, values)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<RunOutput> {
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("simulate needs a [simulate] section".into()))?;
    let mut timings = Timings::default();
    let sys = timings.time("build", || cfg.system())?;
    let group = sys.group();
    let h0 = if sim.h0.is_empty() { DVector::zeros(group.torus_dim()) } else { DVector::from_row_slice(&sim.h0) };
    let x0 = if sim.x0.is_empty() { DVector::zeros(group.dim()) } else { DVector::from_row_slice(&sim.x0) };
    let g0 = group.point(h0, x0)?;
    let u = control_of(sim)?;
    let traj = timings.time("integrate", || sys.integrate(sim.t, &g0, &u))?;
    let end = traj.end().clone();
    let mut report = RunReport::new("simulate", cfg);
    report.residuals = system_residuals(&sys, cfg.seed);
    let cross = if sim.cross_check {
        let (parts, indep) = timings.time("triangular", || sys.triangular_solve(sim.t, &g0, &u))?;
        let tri = sys.algebra().series().assemble(&parts);
        let dev = relative_error(&tri, &end.x);
        report.residuals.push("triangular_vs_direct", dev, CROSS_CHECK_TOL);
        report.residuals.push("level_source_independence", indep, 1e-9);
        Some(dev)
    } else {
        None
    };
    report.simulation = Some(SimulationSummary {
        t: sim.t,
        h: end.h.iter().copied().collect(),
        x: end.x.iter().copied().collect(),
        steps: traj.stats.steps,
        refinements: traj.stats.refinements,
        est_error: traj.stats.est_error,
        cross_check_deviation: cross,
    });
    report.residuals.push(
        "integrator_error_estimate",
        traj.stats.est_error,
        crate::lcs::ERROR_PER_UNIT_TIME * sim.t.abs().max(1.0) * 10.0,
    );
    let trajectory = traj.times.iter().copied().zip(traj.points.iter().cloned()).collect();
    Ok(RunOutput {
        report,
        timings,
        artifacts: Artifacts {
            trajectory: Some(trajectory),
            ..Artifacts::default()
        },
    })
}

/// Graph, sets and verification for one system.
pub struct ChainRun {
    pub summary: ChainSummary,
    pub graph: ChainGraph,
    pub sets: Vec<ChainSet>,
    pub main: Option<usize>,
}

pub fn run_chain(sys: &ControlSystem, chain: &ChainConfig, seed: u64, timings: &mut Timings) -> Result<ChainRun> {
    let group = sys.group();
    let bounds = timings.time("bounds", || estimate_bounds(sys, chain.tau, seed));
    let (bounds, bounds_err) = match bounds {
        Ok(b) => (Some(b), None),
        Err(e @ (Error::NotHyperbolic(_) | Error::TauTooSmall { .. })) => (None, Some(e)),
        Err(e) => return Err(e),
    };
    let bounds_unavailable = bounds_err.as_ref().map(|e| format!("level bounds unavailable: {e}"));
    let (window, from_bounds) = match (&chain.window_lo, &chain.window_hi, &bounds) {
        (Some(lo), Some(hi), _) => (GridWindow::new(group, chain.torus_cells, lo, hi, chain.delta)?, false),
        (None, None, Some(b)) => (
            GridWindow::symmetric(group, chain.torus_cells, &b.half_widths(sys), chain.delta)?,
            true,
        ),
        // no explicit window and no bounds: surface why
        (None, None, None) => return Err(bounds_err.expect("bounds failed")),
        _ => return Err(Error::Config("chain.window_lo and chain.window_hi go together".into())),
    };
    let params = GraphParams::standard(sys, chain.eps, chain.tau, chain.time_samples)?;
    let graph = timings.time("graph", || build_chain_graph(sys, &window, &params, seed))?;
    let sets = timings.time("sets", || extract_chain_sets(group, &graph));
    let fiber = window.central_fiber();
    let mut ctx = VerifyContext::from_system(sys, &window)?;
    ctx.bounds = bounds.as_ref().map(|b| b.bounds());
    ctx.bound_window = from_bounds;
    let mut verification = verify_uniqueness_and_containment(&sets, &fiber, &ctx);
    if graph.audit.failures > 0 {
        verification
            .failures
            .push(format!("{} of {} audited edges failed to re-integrate", graph.audit.failures, graph.audit.checked));
        if verification.verdict == Verdict::Pass {
            verification.verdict = Verdict::Fail;
        }
    }
    let main = main_set_index(&sets, &fiber);
    let tube = match main {
        Some(k) => Some(TubeSummary::from(&timings.time("tube", || jump_and_tube_sets(sys, &graph, &sets[k]))?)),
        None => None,
    };
    let summary = ChainSummary {
        params,
        delta: chain.delta,
        window: window.clone(),
        window_from_bounds: from_bounds,
        node_count: window.node_count(),
        edge_count: graph.edges.len(),
        truncated_runs: graph.truncated,
        audit: graph.audit.clone(),
        bounds,
        bounds_unavailable,
        sets: sets.iter().map(SetSummary::from).collect(),
        verification,
        tube,
    };
    Ok(ChainRun {
        summary,
        graph,
        sets,
        main,
    })
}

fn chain_residuals(s: &ChainSummary) -> ResidualTable {
    let mut t = ResidualTable::default();
    t.push_at_most("edge_audit_failures", s.audit.failures as f64, 0.0);
    t
}

pub fn cmd_chainset(cfg: &RunConfig) -> Result<RunOutput> {
    let mut timings = Timings::default();
    let sys = timings.time("build", || cfg.system())?;
    let mut report = RunReport::new("chainset", cfg);
    report.residuals = system_residuals(&sys, cfg.seed);
    let run = run_chain(&sys, &cfg.chain, cfg.seed, &mut timings)?;
    report.residuals.extend("", chain_residuals(&run.summary));
    report.outcome = run.summary.verification.verdict.into();
    if let Some(msg) = &run.summary.bounds_unavailable {
        report.notes.push(msg.clone());
    }
    report.chain = Some(run.summary);
    Ok(RunOutput {
        report,
        timings,
        artifacts: Artifacts {
            chain: Some(ChainArtifacts {
                graph: run.graph,
                sets: run.sets,
            }),
            ..Artifacts::default()
        },
    })
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn clean(v: f64) -> f64 {
    if v.abs() < 1e-14 {
        0.0
    } else {
        v
    }
}

/// The quotient system as a config of its own.
pub fn downstairs_config(cfg: &RunConfig, sys: &ControlSystem, conj: &Conjugation) -> Result<RunConfig> {
    let c = &conj.quotient.complement;
    let m = c.ncols();
    let brackets = conj
        .quotient
        .constants
        .nonzero()
        .iter()
        .filter(|(i, j, _, _)| i < j)
        .map(|&(i, j, k, v)| (i + 1, j + 1, k + 1, v))
        .collect();
    let cl = |m: DMatrix<f64>| m.map(clean);
    let generators = conj
        .downstairs
        .generators()
        .iter()
        .map(|g| rows(&cl(g.clone())))
        .collect();
    let z = sys
        .z()
        .iter()
        .map(|z| c.tr_mul(z).iter().map(|v| clean(*v)).collect())
        .collect();
    let up_chain = cfg.conjugate.as_ref().and_then(|k| k.chain.clone());
    let mut chain = up_chain.unwrap_or_else(|| cfg.chain.clone());
    if let (Some(lo), Some(hi)) = (&cfg.chain.window_lo, &cfg.chain.window_hi) {
        if chain.window_lo.as_ref().is_none_or(|l| l.len() != m) {
            let group = sys.group();
            let half: Vec<f64> = (0..m)
                .map(|r| {
                    (0..group.dim())
                        .filter(|k| !group.is_periodic(*k))
                        .map(|k| c[(k, r)].abs() * lo[k].abs().max(hi[k].abs()))
                        .sum()
                })
                .collect();
            chain.window_lo = Some(half.iter().map(|h| -h).collect());
            chain.window_hi = Some(half);
        }
    }
    Ok(RunConfig {
        schema_version: cfg.schema_version,
        seed: cfg.seed,
        name: format!("{}-quotient", cfg.name),
        algebra: AlgebraConfig {
            preset: None,
            dim: Some(m),
            brackets,
        },
        derivation: DerivationConfig {
            matrix: rows(&cl(conj.quotient.matrix.clone())),
        },
        compact: CompactConfig {
            torus_dim: sys.group().torus_dim(),
            speeds: sys.flow().speeds().iter().copied().collect(),
            generators,
            periodic: Vec::new(),
        },
        control: ControlConfig {
            z,
            y: sys.y_h().iter().map(|y| y.iter().copied().collect()).collect(),
            lo: cfg.control.lo.clone(),
            hi: cfg.control.hi.clone(),
        },
        chain,
        simulate: None,
        conjugate: Some(ConjugateConfig {
            kernel: Vec::new(),
            chain: None,
        }),
        output: cfg.output.clone(),
    })
}

pub fn cmd_conjugate(cfg: &RunConfig) -> Result<RunOutput> {
    let conj_cfg = cfg
        .conjugate
        .as_ref()
        .ok_or_else(|| Error::Config("conjugate needs a [conjugate] section".into()))?;
    let mut timings = Timings::default();
    let sys = timings.time("build", || cfg.system())?;
    let n = sys.group().dim();
    let kernel = DMatrix::from_fn(n, conj_cfg.kernel.len(), |r, c| {
        conj_cfg.kernel[c].get(r).copied().unwrap_or(f64::NAN)
    });
    if conj_cfg.kernel.iter().any(|v| v.len() != n) {
        return Err(Error::InvalidDecomposition(format!("kernel vectors must have length {n}")));
    }
    let conj = Conjugation::new(sys.group(), sys.flow(), &kernel)?;
    let down_cfg = downstairs_config(cfg, &sys, &conj)?;
    let down_sys = down_cfg.system()?;
    let mut report = RunReport::new("conjugate", cfg);
    report.residuals = system_residuals(&sys, cfg.seed);
    report.residuals.extend("downstairs_", system_residuals(&down_sys, cfg.seed));
    report.residuals.push("quotient_invariance", conj.quotient.invariance_residual, INVARIANCE_TOL);
    report.residuals.push("quotient_ideal", conj.quotient.ideal_residual, INVARIANCE_TOL);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let (mut hom, mut eqv) = (0.0_f64, 0.0_f64);
    for k in 0..SAMPLED_CHECKS {
        let a = sys.group().random_point(&mut rng, 1.0);
        let b = sys.group().random_point(&mut rng, 1.0);
        hom = hom.max(conj.homomorphism_residual(sys.group(), &a, &b));
        eqv = eqv.max(conj.equivariance_residual(sys.group(), sys.flow(), 0.1 * k as f64, &a));
    }
    report.residuals.push("psi_homomorphism", hom, 1e-9);
    report.residuals.push("psi_equivariance", eqv, 1e-8);
    let mut nonzero: Vec<_> = eigenvalues(sys.flow().d())?
        .into_iter()
        .filter(|z| z.re.abs() > CLUSTER_TOL)
        .collect();
    let mut quot = eigenvalues(&conj.quotient.matrix)?;
    let key = |a: &nalgebra::Complex<f64>, b: &nalgebra::Complex<f64>| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im));
    nonzero.sort_by(key);
    quot.sort_by(key);
    let deviation = if nonzero.len() == quot.len() {
        nonzero.iter().zip(&quot).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    report.residuals.push("quotient_eigenvalues", deviation, EIGEN_MATCH_TOL);
    let up = run_chain(&sys, &cfg.chain, cfg.seed, &mut timings)?;
    let down = run_chain(&down_sys, &down_cfg.chain, cfg.seed, &mut timings)?;
    let radius = down_cfg.chain.eps + down_cfg.chain.delta;
    let inclusion = match (up.main, down.main) {
        (Some(a), Some(b)) => image_inclusion(
            &conj,
            &up.graph.window,
            &up.sets[a],
            &down_sys.group().clone(),
            &down.graph.window,
            &down.sets[b],
            radius,
        ),
        _ => InclusionReport {
            checked: 0,
            failures: 0,
            radius,
            outside_window: 0,
        },
    };
    let mapped: Vec<MappedPoint> = up
        .main
        .map(|a| {
            let nodes = &up.sets[a].nodes;
            let stride = (nodes.len() / 32).max(1);
            nodes
                .iter()
                .step_by(stride)
                .map(|id| {
                    let p = up.graph.window.center(*id);
                    let q = conj.psi(&p);
                    MappedPoint {
                        up: p.h.iter().chain(p.x.iter()).copied().collect(),
                        down: q.h.iter().chain(q.x.iter()).copied().collect(),
                    }
                })
                .collect()
        })
        .unwrap_or_default();
    let up_verdict = up.summary.verification.verdict;
    let down_verdict = down.summary.verification.verdict;
    report.outcome = if !inclusion.holds() || up_verdict == Verdict::Fail || down_verdict == Verdict::Fail {
        Outcome::Fail
    } else {
        Outcome::Pass
    };
    report.residuals.extend("upstairs_", chain_residuals(&up.summary));
    report.residuals.extend("downstairs_", chain_residuals(&down.summary));
    let text = down_cfg.to_toml()?;
    report.conjugation = Some(ConjugationSummary {
        kernel_dim: n - conj.quotient.complement.ncols(),
        quotient_eigenvalues: complex_pairs(&quot),
        nonzero_eigenvalues: complex_pairs(&nonzero),
        eigenvalue_deviation: deviation,
        downstairs_config: text.clone(),
        mapped_samples: mapped.clone(),
        upstairs: up.summary,
        downstairs: down.summary,
        inclusion,
    });
    Ok(RunOutput {
        report,
        timings,
        artifacts: Artifacts {
            chain: Some(ChainArtifacts {
                graph: up.graph,
                sets: up.sets,
            }),
            downstairs: Some((
                text,
                ChainArtifacts {
                    graph: down.graph,
                    sets: down.sets,
                },
            )),
            mapping: mapped,
            ..Artifacts::default()
        },
    })
}
