//! Derivations of nilpotent algebras: Leibniz check, stable/central/unstable
//! splitting, block structure along the central series, hyperbolic decay
//! constants and quotient derivations.

use nalgebra::{Complex, DMatrix};

use crate::algebra::{CentralSeries, Element, NilpotentAlgebra, StructureConstants};
use crate::error::{Error, Result};
use crate::linalg;

pub const LEIBNIZ_TOL: f64 = 1e-10;
/// Real parts within this distance are clustered; clusters this close to
/// zero are central.
pub const CLUSTER_TOL: f64 = 1e-8;
pub const INVARIANCE_TOL: f64 = 1e-9;
pub const BLOCK_TOL: f64 = 1e-10;

/// Max over basis pairs of `|D[e_i,e_j] - [De_i,e_j] - [e_i,De_j]|`.
pub fn check_derivation(d: &DMatrix<f64>, sc: &StructureConstants) -> Result<f64> {
    let n = sc.dim();
    if d.nrows() != n || d.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if d.nrows() != n { d.nrows() } else { d.ncols() },
        });
    }
    let e = |i: usize| Element::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
    let mut r = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let (ei, ej) = (e(i), e(j));
            let lhs = d * sc.br(&ei, &ej);
            let rhs = sc.br(&(d * &ei), &ej) + sc.br(&ei, &(d * &ej));
            r = r.max((lhs - rhs).amax());
        }
    }
    Ok(r)
}

/// Largest leakage `|(I - P_i) T P_i|` of a map out of the series terms.
pub fn series_leakage(t: &DMatrix<f64>, cs: &CentralSeries) -> f64 {
    let n = cs.dim();
    let mut r = 0.0_f64;
    for i in 1..=cs.class() {
        let u = cs.term(i);
        let q = DMatrix::identity(n, n) - u * u.transpose();
        r = r.max(linalg::max_abs(&(q * t * u)));
    }
    r
}

/// A validated derivation.
#[derive(Debug, Clone)]
pub struct Derivation {
    matrix: DMatrix<f64>,
    leibniz_residual: f64,
    series_residual: f64,
}

impl Derivation {
    pub fn new(matrix: DMatrix<f64>, algebra: &NilpotentAlgebra) -> Result<Self> {
        let leibniz = check_derivation(&matrix, algebra.constants())?;
        if leibniz >= LEIBNIZ_TOL {
            return Err(Error::validation("leibniz", leibniz, LEIBNIZ_TOL));
        }
        let series = series_leakage(&matrix, algebra.series());
        if series >= LEIBNIZ_TOL {
            return Err(Error::SeriesNotPreserved(series));
        }
        Ok(Derivation {
            matrix,
            leibniz_residual: leibniz,
            series_residual: series,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn leibniz_residual(&self) -> f64 {
        self.leibniz_residual
    }

    pub fn series_residual(&self) -> f64 {
        self.series_residual
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Eigenvalues sorted by real part, then imaginary part.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::DefectiveClustering("real Schur iteration did not converge".into()))?;
    let mut ev: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(ev)
}

/// Eigenvalues grouped by (clustered) real part.
#[derive(Debug, Clone)]
pub struct RealPartCluster {
    pub real_part: f64,
    pub eigenvalues: Vec<Complex<f64>>,
}

fn cluster_real_parts(ev: &[Complex<f64>]) -> Vec<RealPartCluster> {
    let mut out: Vec<RealPartCluster> = Vec::new();
    for &z in ev {
        match out.last_mut() {
            Some(c) if (z.re - c.eigenvalues.last().expect("nonempty cluster").re).abs() <= CLUSTER_TOL => {
                c.eigenvalues.push(z)
            }
            _ => out.push(RealPartCluster {
                real_part: z.re,
                eigenvalues: vec![z],
            }),
        }
    }
    for c in &mut out {
        c.real_part = c.eigenvalues.iter().map(|z| z.re).sum::<f64>() / c.eigenvalues.len() as f64;
    }
    out
}

/// `g+ (+) g0 (+) g-` split of a derivation's generalized eigenspaces.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<Complex<f64>>,
    pub clusters: Vec<RealPartCluster>,
    /// Orthonormal bases (columns).
    pub plus: DMatrix<f64>,
    pub zero: DMatrix<f64>,
    pub minus: DMatrix<f64>,
    /// Spectral (generally oblique) projectors along the other two parts.
    pub proj_plus: DMatrix<f64>,
    pub proj_zero: DMatrix<f64>,
    pub proj_minus: DMatrix<f64>,
    pub invariance_residual: f64,
}

impl SpectralDecomposition {
    pub fn is_hyperbolic(&self) -> bool {
        self.zero.ncols() == 0
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.plus.ncols(), self.zero.ncols(), self.minus.ncols())
    }

    /// Max bracket leakage of `g+` and `g-` out of themselves.
    pub fn subalgebra_residual(&self, sc: &StructureConstants) -> f64 {
        let n = sc.dim();
        let mut r = 0.0_f64;
        for basis in [&self.plus, &self.minus] {
            let q = DMatrix::identity(n, n) - basis * basis.transpose();
            for a in 0..basis.ncols() {
                for b in 0..basis.ncols() {
                    let br = sc.br(&basis.column(a).into_owned(), &basis.column(b).into_owned());
                    r = r.max((&q * br).amax());
                }
            }
        }
        r
    }
}

fn invariance_residual(d: &DMatrix<f64>, basis: &DMatrix<f64>) -> f64 {
    if basis.ncols() == 0 {
        return 0.0;
    }
    let n = d.nrows();
    let q = DMatrix::identity(n, n) - basis * basis.transpose();
    linalg::max_abs(&(q * d * basis))
}

/// Splits `D` by the sign of eigenvalue real parts.
pub fn spectral_split(d: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    let n = d.nrows();
    let ev = eigenvalues(d)?;
    let clusters = cluster_real_parts(&ev);
    let ambiguous = 1e-6;
    for c in &clusters {
        let a = c.real_part.abs();
        if a > CLUSTER_TOL && a <= ambiguous {
            return Err(Error::DefectiveClustering(format!(
                "cluster with real part {:e} is too close to the imaginary axis",
                c.real_part
            )));
        }
    }
    let count = |pred: &dyn Fn(f64) -> bool| -> usize {
        clusters
            .iter()
            .filter(|c| pred(c.real_part))
            .map(|c| c.eigenvalues.len())
            .sum()
    };
    let n_plus = count(&|r| r > CLUSTER_TOL);
    let n_minus = count(&|r| r < -CLUSTER_TOL);
    let n_zero = n - n_plus - n_minus;
    let eta = clusters
        .iter()
        .map(|c| c.real_part.abs())
        .filter(|&a| a > CLUSTER_TOL)
        .fold(f64::INFINITY, f64::min)
        / 2.0;
    let id = DMatrix::<f64>::identity(n, n);
    let (proj_plus, proj_minus) = if eta.is_finite() {
        let pp = if n_plus > 0 {
            linalg::projector_right_of(d, eta)?
        } else {
            DMatrix::zeros(n, n)
        };
        let pm = if n_minus > 0 {
            &id - linalg::projector_right_of(d, -eta)?
        } else {
            DMatrix::zeros(n, n)
        };
        (pp, pm)
    } else {
        (DMatrix::zeros(n, n), DMatrix::zeros(n, n))
    };
    let proj_zero = &id - &proj_plus - &proj_minus;
    let basis = |p: &DMatrix<f64>, expect: usize| -> Result<DMatrix<f64>> {
        if expect == 0 {
            return Ok(DMatrix::zeros(n, 0));
        }
        let (q, r) = linalg::range_projector(p, 1e-12);
        if r != expect {
            return Err(Error::DefectiveClustering(format!(
                "spectral projector has rank {r}, expected {expect}"
            )));
        }
        Ok(linalg::basis_from_projector(&q, r))
    };
    let plus = basis(&proj_plus, n_plus)?;
    let zero = basis(&proj_zero, n_zero)?;
    let minus = basis(&proj_minus, n_minus)?;
    let inv = invariance_residual(d, &plus)
        .max(invariance_residual(d, &zero))
        .max(invariance_residual(d, &minus));
    if inv >= INVARIANCE_TOL * d.norm().max(1.0) {
        return Err(Error::DefectiveClustering(format!(
            "computed subspaces are not invariant (residual {inv:e})"
        )));
    }
    Ok(SpectralDecomposition {
        eigenvalues: ev,
        clusters,
        plus,
        zero,
        minus,
        proj_plus,
        proj_zero,
        proj_minus,
        invariance_residual: inv,
    })
}

/// Blocks `T_ij = B_i^T T B_j` of a map in the `V_i` coordinates (1-based).
#[derive(Debug, Clone)]
pub struct BlockDecomposition {
    level_dims: Vec<usize>,
    blocks: Vec<Vec<DMatrix<f64>>>,
}

impl BlockDecomposition {
    fn from_map(t: &DMatrix<f64>, cs: &CentralSeries) -> Self {
        let k = cs.class();
        let blocks = (1..=k)
            .map(|i| {
                (1..=k)
                    .map(|j| cs.complement(i).transpose() * t * cs.complement(j))
                    .collect()
            })
            .collect();
        BlockDecomposition {
            level_dims: cs.level_dims(),
            blocks,
        }
    }

    pub fn class(&self) -> usize {
        self.level_dims.len()
    }

    pub fn level_dims(&self) -> &[usize] {
        &self.level_dims
    }

    pub fn block(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.blocks[i - 1][j - 1]
    }

    pub fn diagonal(&self, i: usize) -> &DMatrix<f64> {
        self.block(i, i)
    }

    /// Max entry over blocks above the diagonal.
    pub fn upper_residual(&self) -> f64 {
        let k = self.class();
        let mut r = 0.0_f64;
        for i in 1..=k {
            for j in i + 1..=k {
                r = r.max(linalg::max_abs(self.block(i, j)));
            }
        }
        r
    }

    pub fn diagonal_residual(&self) -> f64 {
        (1..=self.class())
            .map(|i| linalg::max_abs(self.diagonal(i)))
            .fold(0.0, f64::max)
    }

    /// Max entry over blocks with `i < shift + j`.
    pub fn vanishing_residual(&self, shift: usize) -> f64 {
        let k = self.class();
        let mut r = 0.0_f64;
        for i in 1..=k {
            for j in 1..=k {
                if i < shift + j {
                    r = r.max(linalg::max_abs(self.block(i, j)));
                }
            }
        }
        r
    }
}

/// Block decomposition of a series-preserving map.
pub fn block_decompose(t: &DMatrix<f64>, cs: &CentralSeries) -> Result<BlockDecomposition> {
    if t.nrows() != cs.dim() || t.ncols() != cs.dim() {
        return Err(Error::DimensionMismatch {
            expected: cs.dim(),
            found: t.nrows(),
        });
    }
    let leak = series_leakage(t, cs);
    if leak >= BLOCK_TOL * t.norm().max(1.0) {
        return Err(Error::SeriesNotPreserved(leak));
    }
    let bd = BlockDecomposition::from_map(t, cs);
    let up = bd.upper_residual();
    if up >= BLOCK_TOL * t.norm().max(1.0) {
        return Err(Error::SeriesNotPreserved(up));
    }
    Ok(bd)
}

/// `ad(x_1) ... ad(x_p)` as a matrix.
pub fn ad_chain(algebra: &NilpotentAlgebra, xs: &[Element]) -> DMatrix<f64> {
    let n = algebra.dim();
    xs.iter()
        .fold(DMatrix::identity(n, n), |acc, x| acc * algebra.ad(x))
}

/// Blocks of `ad(x_1) ... ad(x_p)`.
pub fn ad_chain_blocks(algebra: &NilpotentAlgebra, xs: &[Element]) -> Result<BlockDecomposition> {
    if xs.is_empty() || xs.len() >= algebra.class().max(2) {
        return Err(Error::InvalidArgument(format!(
            "chain length {} outside 1..={}",
            xs.len(),
            algebra.class().saturating_sub(1).max(1)
        )));
    }
    for x in xs {
        algebra.constants().check_dim(x)?;
    }
    Ok(BlockDecomposition::from_map(&ad_chain(algebra, xs), algebra.series()))
}

/// Max change in block `(i, j)` of `ad(x_1)...ad(x_p)` when every `x_q` is
/// cut down to its components of level `<= i - j - p + 1`, over blocks on or
/// below the `p`-th subdiagonal.
pub fn ad_chain_locality_residual(algebra: &NilpotentAlgebra, xs: &[Element]) -> Result<f64> {
    let full = ad_chain_blocks(algebra, xs)?;
    let cs = algebra.series();
    let k = algebra.class();
    let p = xs.len();
    let mut r = 0.0_f64;
    for i in 1..=k {
        for j in 1..=k {
            if i < p + j {
                continue;
            }
            let keep = i - j - p + 1;
            let cut: Vec<Element> = xs.iter().map(|x| cs.truncate_from(x, keep + 1)).collect();
            let b = BlockDecomposition::from_map(&ad_chain(algebra, &cut), cs);
            r = r.max(linalg::max_abs(&(full.block(i, j) - b.block(i, j))));
        }
    }
    Ok(r)
}

/// Fit grid step for the decay constants.
pub const KAPPA_STEP: f64 = 0.01;

/// Decay constants of one diagonal block: on the stable part
/// `|e^{tA} P-| <= kappa e^{-t mu}`, on the unstable part
/// `|e^{-tA} P+| <= kappa e^{-t mu}` for `t > 0`.
#[derive(Debug, Clone)]
pub struct LevelConstants {
    pub kappa: f64,
    pub mu: f64,
    pub t_max: f64,
    /// Largest `e^{t mu}`-weighted norm seen on the fit grid.
    pub grid_sup: f64,
    pub proj_plus: DMatrix<f64>,
    pub proj_minus: DMatrix<f64>,
}

/// Max of the two weighted norms `e^{t mu}|e^{tA}P-|`, `e^{t mu}|e^{-tA}P+|`
/// over `t = step, 2 step, ..., <= t_max`.
pub fn weighted_decay_sup(
    a: &DMatrix<f64>,
    proj_plus: &DMatrix<f64>,
    proj_minus: &DMatrix<f64>,
    mu: f64,
    step: f64,
    t_max: f64,
) -> f64 {
    let fwd = linalg::expm(&(a * step));
    let bwd = linalg::expm(&(a * -step));
    let mut m = proj_minus.clone();
    let mut p = proj_plus.clone();
    let steps = (t_max / step).floor() as usize;
    let mut sup = 0.0_f64;
    for s in 1..=steps {
        m = &fwd * m;
        p = &bwd * p;
        let w = (s as f64 * step * mu).exp();
        sup = sup.max(w * linalg::op_norm(&m)).max(w * linalg::op_norm(&p));
    }
    sup
}

impl LevelConstants {
    /// Largest excess `weighted norm - kappa` over a grid with the given step.
    pub fn violation(&self, a: &DMatrix<f64>, step: f64) -> f64 {
        weighted_decay_sup(a, &self.proj_plus, &self.proj_minus, self.mu, step, self.t_max) - self.kappa
    }
}

/// Decay constants of a hyperbolic block; `t_max` defaults to `50 / mu`.
pub fn hyperbolic_constants(a: &DMatrix<f64>, t_max: Option<f64>) -> Result<LevelConstants> {
    let n = a.nrows();
    let ev = eigenvalues(a)?;
    let min_re = ev.iter().map(|z| z.re.abs()).fold(f64::INFINITY, f64::min);
    if n == 0 || min_re <= CLUSTER_TOL {
        let worst = ev
            .iter()
            .map(|z| z.re)
            .min_by(|x, y| x.abs().total_cmp(&y.abs()))
            .unwrap_or(0.0);
        return Err(Error::NotHyperbolic(worst));
    }
    let mu = 0.9 * min_re;
    let eta = min_re / 2.0;
    let id = DMatrix::<f64>::identity(n, n);
    let proj_plus = linalg::projector_right_of(a, eta)?;
    let proj_minus = &id - linalg::projector_right_of(a, -eta)?;
    let t_max = t_max.unwrap_or(50.0 / mu);
    let sup = weighted_decay_sup(a, &proj_plus, &proj_minus, mu, KAPPA_STEP, t_max);
    let kappa = if sup <= 1.0 + 1e-12 { 1.0 } else { 1.05 * sup };
    Ok(LevelConstants {
        kappa,
        mu,
        t_max,
        grid_sup: sup,
        proj_plus,
        proj_minus,
    })
}

/// Induced derivation on `u / n0` in orthogonal-complement coordinates.
#[derive(Debug, Clone)]
pub struct QuotientDerivation {
    /// Orthonormal complement of the kernel (columns); quotient coordinates
    /// of `x` are `C^T x`.
    pub complement: DMatrix<f64>,
    pub matrix: DMatrix<f64>,
    pub constants: StructureConstants,
    pub invariance_residual: f64,
    pub ideal_residual: f64,
}

/// Quotient of `(u, D)` by a `D`-invariant ideal spanned by `kernel` columns.
pub fn quotient_derivation(
    d: &DMatrix<f64>,
    sc: &StructureConstants,
    kernel: &DMatrix<f64>,
) -> Result<QuotientDerivation> {
    let n = sc.dim();
    if d.nrows() != n || kernel.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: kernel.nrows(),
        });
    }
    let k = linalg::orthonormal_span(kernel);
    let q = DMatrix::identity(n, n) - &k * k.transpose();
    let inv = if k.ncols() == 0 {
        0.0
    } else {
        linalg::max_abs(&(&q * d * &k))
    };
    if inv >= INVARIANCE_TOL {
        return Err(Error::KernelNotInvariant(inv));
    }
    let mut ideal = 0.0_f64;
    for a in 0..k.ncols() {
        let ka = k.column(a).into_owned();
        for j in 0..n {
            let e = Element::from_fn(n, |r, _| if r == j { 1.0 } else { 0.0 });
            ideal = ideal.max((&q * sc.br(&ka, &e)).amax());
        }
    }
    if ideal >= INVARIANCE_TOL {
        return Err(Error::InvalidDecomposition(format!(
            "kernel subspace is not an ideal (residual {ideal:e})"
        )));
    }
    let c = if k.ncols() == 0 {
        DMatrix::identity(n, n)
    } else {
        linalg::orthogonal_complement(&k)
    };
    let m = c.ncols();
    let dhat = c.transpose() * d * &c;
    let mut dense = vec![0.0; m * m * m];
    for a in 0..m {
        for b in 0..m {
            let br = c.tr_mul(&sc.br(&c.column(a).into_owned(), &c.column(b).into_owned()));
            for r in 0..m {
                let v = br[r];
                dense[(a * m + b) * m + r] = if v.abs() < 1e-14 { 0.0 } else { v };
            }
        }
    }
    let constants = if m == 0 {
        return Err(Error::InvalidDecomposition("kernel is the whole algebra".into()));
    } else {
        StructureConstants::from_dense(m, dense)?
    };
    Ok(QuotientDerivation {
        complement: c,
        matrix: dhat,
        constants,
        invariance_residual: inv,
        ideal_residual: ideal,
    })
}
