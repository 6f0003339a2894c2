use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::algebra::Element;
use crate::error::{Error, Result};
use crate::group::SemidirectPoint;
use crate::lcs::{ControlFunction, ControlSystem};
use crate::spectral::{block_decompose, hyperbolic_constants, LevelConstants};

/// Lattice points per lower-level coordinate.
const LATTICE: usize = 5;
/// Above this many lattice points, random starts are used instead.
const LATTICE_CAP: usize = 625;
const RANDOM_STARTS: usize = 512;
const JUMP_DIRECTIONS: usize = 64;
/// Sampling stops once lower levels exceed this multiple of their bound.
const ESCAPE_FACTOR: f64 = 1.5;

/// `B = 2 C (1 + kappa / mu) / (1 - kappa e^{-tau mu})`.
pub fn theoretical_bound(kappa: f64, mu: f64, c: f64, tau: f64, level: usize) -> Result<f64> {
    let factor = kappa * (-tau * mu).exp();
    if factor >= 1.0 {
        return Err(Error::TauTooSmall { level, factor });
    }
    Ok(2.0 * c * (1.0 + kappa / mu) / (1.0 - factor))
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelBound {
    pub level: usize,
    pub kappa: f64,
    pub mu: f64,
    /// Sampled `max |G^i|`.
    pub source_max: f64,
    /// `c + sup |H^i|` over jumps of size `c`.
    pub jump: f64,
    /// `C_i = source_max + jump`.
    pub c: f64,
    /// `kappa e^{-tau mu}`.
    pub factor: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundEstimate {
    pub tau: f64,
    pub jump_constant: f64,
    pub levels: Vec<LevelBound>,
}

impl BoundEstimate {
    pub fn bounds(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.bound).collect()
    }

    /// Default window half-widths: `1.5 sum_i B_i |row_k(V_i basis)|`.
    pub fn half_widths(&self, sys: &ControlSystem) -> Vec<f64> {
        let cs = sys.algebra().series();
        let n = sys.group().dim();
        (0..n)
            .map(|k| {
                1.5 * self
                    .levels
                    .iter()
                    .map(|l| l.bound * cs.complement(l.level).row(k).norm())
                    .sum::<f64>()
            })
            .collect()
    }
}

/// Decay constants of every diagonal block `D_ii`.
pub fn level_constants(sys: &ControlSystem) -> Result<Vec<LevelConstants>> {
    let cs = sys.algebra().series();
    let blocks = block_decompose(sys.flow().d(), cs)?;
    (1..=cs.class()).map(|i| hyperbolic_constants(blocks.diagonal(i), None)).collect()
}

/// Start points for level `level`: lower components on a lattice (or random)
/// inside the balls `|x^j| <= B_j`, higher components zero.
fn starts(sys: &ControlSystem, level: usize, bounds: &[f64], rng: &mut ChaCha8Rng) -> Vec<Element> {
    let cs = sys.algebra().series();
    let dims = cs.level_dims();
    let lower: usize = dims[..level - 1].iter().sum();
    let mut out = Vec::new();
    let build = |coords: &[f64]| -> Option<Element> {
        let mut parts = Vec::with_capacity(dims.len());
        let mut off = 0;
        for (j, &d) in dims.iter().enumerate() {
            if j + 1 < level {
                let v = Element::from_row_slice(&coords[off..off + d]);
                if v.norm() > bounds[j] * (1.0 + 1e-12) {
                    return None;
                }
                parts.push(v);
                off += d;
            } else {
                parts.push(Element::zeros(d));
            }
        }
        Some(cs.assemble(&parts))
    };
    let lattice_ok = (LATTICE as f64).powi(lower as i32) <= LATTICE_CAP as f64;
    if lattice_ok {
        let total = LATTICE.pow(lower as u32);
        let mut coords = vec![0.0; lower];
        for combo in 0..total {
            let mut rem = combo;
            let mut off = 0;
            for (j, &d) in dims[..level - 1].iter().enumerate() {
                for c in 0..d {
                    let k = rem % LATTICE;
                    rem /= LATTICE;
                    coords[off + c] = bounds[j] * (2.0 * k as f64 / (LATTICE - 1) as f64 - 1.0);
                }
                off += d;
            }
            if let Some(x) = build(&coords) {
                out.push(x);
            }
        }
    } else {
        while out.len() < RANDOM_STARTS {
            let mut coords = Vec::with_capacity(lower);
            for (j, &d) in dims[..level - 1].iter().enumerate() {
                // uniform in the ball
                let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                let r = bounds[j] * rng.random::<f64>().powf(1.0 / d as f64);
                coords.extend(dir.iter().map(|v| v * r / norm));
            }
            if let Some(x) = build(&coords) {
                out.push(x);
            }
        }
    }
    out
}

/// Level-by-level `C_i` estimates and bounds `B_i`.
pub fn estimate_bounds(sys: &ControlSystem, tau: f64, seed: u64) -> Result<BoundEstimate> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("tau must be positive".into()));
    }
    let consts = level_constants(sys)?;
    let alg = sys.algebra();
    let cs = alg.series();
    let k = cs.class();
    let c_jump = sys.group().rho_norm_bound();
    let family = sys.omega().sample_family();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times: Vec<f64> = (1..=60).map(|j| tau * j as f64 / 30.0).collect();
    let mut levels: Vec<LevelBound> = Vec::with_capacity(k);
    for level in 1..=k {
        let lc = &consts[level - 1];
        let bounds: Vec<f64> = levels.iter().map(|l| l.bound).collect();
        let mut source = 0.0_f64;
        let mut jump_sup = 0.0_f64;
        if level == 1 {
            for u in &family {
                let w = sys.freeze(u)?.w;
                source = source.max(cs.component(&w, 1).norm());
            }
        } else {
            let pts = starts(sys, level, &bounds, &mut rng);
            for x0 in &pts {
                for u in &family {
                    let w = sys.freeze(u)?.w;
                    let ctl = ControlFunction::constant(u.clone(), 0.0, 2.0 * tau)?;
                    let g0 = SemidirectPoint::new(DVector::zeros(sys.group().torus_dim()), x0.clone());
                    let mut eval = |x: &Element| source = source.max(sys.level_source(level, x, &w).norm());
                    eval(x0);
                    let path = sys.sample_fixed(&g0, &ctl, &times, |p| {
                        (1..level).all(|j| cs.component(&p.x, j).norm() <= ESCAPE_FACTOR * bounds[j - 1])
                    })?;
                    for p in &path {
                        if (1..level).all(|j| cs.component(&p.x, j).norm() <= ESCAPE_FACTOR * bounds[j - 1]) {
                            eval(&p.x);
                        }
                    }
                }
                for _ in 0..JUMP_DIRECTIONS {
                    let dir = Element::from_fn(alg.dim(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
                    let w = dir.normalize() * c_jump;
                    jump_sup = jump_sup.max(alg.product_correction(x0, &w, level)?.norm());
                }
            }
        }
        let c = source + c_jump + jump_sup;
        let bound = theoretical_bound(lc.kappa, lc.mu, c, tau, level)?;
        levels.push(LevelBound {
            level,
            kappa: lc.kappa,
            mu: lc.mu,
            source_max: source,
            jump: c_jump + jump_sup,
            c,
            factor: lc.kappa * (-tau * lc.mu).exp(),
            bound,
        });
    }
    Ok(BoundEstimate {
        tau,
        jump_constant: c_jump,
        levels,
    })
}
