//! Linear mixed models `y_i = X_i β + Z_i b_i + ε_i` with `b_i ~ N(0, B)` and
//! `ε_i ~ N(0, σ² I)`, fitted by maximum likelihood with EM, plus BLUP
//! prediction of subject random effects.
//!
//! The EM works on per-subject sufficient statistics (`X'X`, `X'y`, `y'y`);
//! `Z` is a column subset of `X`, so nothing per observation is revisited
//! after the first pass.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LmmSpec, Obs};
use crate::linalg::{chol_inverse, chol_logdet, chol_solve, cholesky, lu_solve, matmul, matmul_tn};

pub const SIGMA2_FLOOR: f64 = 1e-10;
const INIT_FLOOR: f64 = 1e-4;
const RIDGE: f64 = 1e-8;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmmError {
    #[error("insufficient data: {subjects} subjects with observations, {obs} observations (need {needed})")]
    InsufficientData {
        subjects: usize,
        obs: usize,
        needed: usize,
    },
    #[error("fixed-effect design is singular")]
    SingularDesign,
}

/// Polynomial time bases for the fixed and random parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmmDesign {
    fixed: Vec<u32>,
    random: Vec<u32>,
    // position of each random degree within the fixed basis
    random_ix: Vec<usize>,
}

impl LmmDesign {
    pub fn new(fixed: Vec<u32>, random: Vec<u32>) -> Self {
        let random_ix = random
            .iter()
            .map(|d| {
                fixed
                    .iter()
                    .position(|f| f == d)
                    .expect("random basis must be a subset of the fixed basis")
            })
            .collect();
        LmmDesign {
            fixed,
            random,
            random_ix,
        }
    }

    pub fn from_spec(spec: &LmmSpec) -> Self {
        Self::new(spec.fixed.clone(), spec.random.clone())
    }

    pub fn n_fixed(&self) -> usize {
        self.fixed.len()
    }

    /// Number of random effects, q_r.
    pub fn n_random(&self) -> usize {
        self.random.len()
    }

    pub fn fixed_degrees(&self) -> &[u32] {
        &self.fixed
    }

    pub fn random_degrees(&self) -> &[u32] {
        &self.random
    }

    /// Fills one row of X at time `t`.
    pub fn x_row(&self, t: f64, out: &mut [f64]) {
        for (o, &d) in out.iter_mut().zip(&self.fixed) {
            *o = t.powi(d as i32);
        }
    }

    /// Fills one row of Z at time `t`.
    pub fn z_row(&self, t: f64, out: &mut [f64]) {
        for (o, &d) in out.iter_mut().zip(&self.random) {
            *o = t.powi(d as i32);
        }
    }

    /// Smallest number of observations for which the model is identifiable.
    pub fn min_observations(&self) -> usize {
        let q = self.n_random();
        self.n_fixed() + q * (q + 1) / 2 + 1
    }
}

/// Estimated parameters of a mixed model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub beta: Vec<f64>,
    /// Random-effect covariance, row-major `q×q`.
    pub b_cov: Vec<f64>,
    pub sigma2: f64,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_subjects: usize,
    pub n_obs: usize,
}

impl LmmFit {
    pub fn n_random(&self) -> usize {
        (self.b_cov.len() as f64).sqrt().round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop when |Δ loglik| < tol · max(|loglik|, 1).
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

struct SubjectStats {
    n: f64,
    xtx: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
    ztz: Vec<f64>,
    ztx: Vec<f64>,
    zty: Vec<f64>,
}

impl SubjectStats {
    fn new(design: &LmmDesign, series: &[Obs]) -> Self {
        let p = design.n_fixed();
        let q = design.n_random();
        let mut xtx = vec![0.0; p * p];
        let mut xty = vec![0.0; p];
        let mut yty = 0.0;
        let mut x = vec![0.0; p];
        for o in series {
            design.x_row(o.time, &mut x);
            for i in 0..p {
                xty[i] += x[i] * o.value;
                for j in 0..p {
                    xtx[i * p + j] += x[i] * x[j];
                }
            }
            yty += o.value * o.value;
        }
        let rix = &design.random_ix;
        let mut ztz = vec![0.0; q * q];
        let mut ztx = vec![0.0; q * p];
        for a in 0..q {
            for b in 0..q {
                ztz[a * q + b] = xtx[rix[a] * p + rix[b]];
            }
            for j in 0..p {
                ztx[a * p + j] = xtx[rix[a] * p + j];
            }
        }
        let zty = rix.iter().map(|&i| xty[i]).collect();
        SubjectStats {
            n: series.len() as f64,
            xtx,
            xty,
            yty,
            ztz,
            ztx,
            zty,
        }
    }
}

struct Params {
    beta: Vec<f64>,
    b_cov: Vec<f64>,
    // B = L L'
    b_root: Vec<f64>,
    sigma2: f64,
}

impl Params {
    fn new(beta: Vec<f64>, b_cov: Vec<f64>, sigma2: f64, q: usize) -> Self {
        let (b_cov, b_root) = psd_root(&b_cov, q);
        Params {
            beta,
            b_cov,
            b_root,
            sigma2: sigma2.max(SIGMA2_FLOOR),
        }
    }
}

/// Clamps a symmetric matrix to PSD and returns it with a square-root factor.
fn psd_root(b: &[f64], q: usize) -> (Vec<f64>, Vec<f64>) {
    let m = DMatrix::from_fn(q, q, |i, j| 0.5 * (b[i * q + j] + b[j * q + i]));
    let eig = SymmetricEigen::new(m);
    let vals: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    let mut clamped = vec![0.0; q * q];
    let mut root = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..q {
            root[i * q + j] = eig.eigenvectors[(i, j)] * vals[j].sqrt();
            clamped[i * q + j] = vals
                .iter()
                .enumerate()
                .map(|(k, v)| eig.eigenvectors[(i, k)] * v * eig.eigenvectors[(j, k)])
                .sum();
        }
    }
    (clamped, root)
}

#[derive(Default)]
struct Accum {
    sum_bb: Vec<f64>,
    h: Vec<f64>,
    s1: f64,
}

/// Per-fit scratch buffers reused across subjects and iterations.
struct Workspace {
    zr: Vec<f64>,
    g: Vec<f64>,
    tmp: Vec<f64>,
    a: Vec<f64>,
    w: Vec<f64>,
    u: Vec<f64>,
    bhat: Vec<f64>,
    ainv: Vec<f64>,
    c: Vec<f64>,
    col: Vec<f64>,
}

impl Workspace {
    fn new(q: usize) -> Self {
        Workspace {
            zr: vec![0.0; q],
            g: vec![0.0; q * q],
            tmp: vec![0.0; q * q],
            a: vec![0.0; q * q],
            w: vec![0.0; q],
            u: vec![0.0; q],
            bhat: vec![0.0; q],
            ainv: vec![0.0; q * q],
            c: vec![0.0; q * q],
            col: vec![0.0; q],
        }
    }
}

struct Model<'a> {
    p: usize,
    q: usize,
    stats: &'a [SubjectStats],
    xtx_total: Vec<f64>,
    n_obs: f64,
}

impl Model<'_> {
    /// E-step: returns the marginal log-likelihood at `par`; accumulates
    /// the M-step statistics when `acc` is given.
    fn sweep(&self, par: &Params, ws: &mut Workspace, mut acc: Option<&mut Accum>) -> f64 {
        let (p, q) = (self.p, self.q);
        let s2 = par.sigma2;
        let l = &par.b_root;
        let mut ll = 0.0;
        for st in self.stats {
            // residual summaries at the current β
            let mut rr = st.yty;
            let mut xb_dot = 0.0;
            for i in 0..p {
                let mut xtxb = 0.0;
                for j in 0..p {
                    xtxb += st.xtx[i * p + j] * par.beta[j];
                }
                rr += par.beta[i] * xtxb;
                xb_dot += par.beta[i] * st.xty[i];
            }
            rr -= 2.0 * xb_dot;
            for a in 0..q {
                let mut s = st.zty[a];
                for j in 0..p {
                    s -= st.ztx[a * p + j] * par.beta[j];
                }
                ws.zr[a] = s;
            }
            // A = I + L' Z'Z L / σ²
            matmul(&st.ztz, l, q, q, q, &mut ws.tmp);
            matmul_tn(l, &ws.tmp, q, q, q, &mut ws.g);
            for i in 0..q {
                for j in 0..q {
                    ws.a[i * q + j] = ws.g[i * q + j] / s2 + if i == j { 1.0 } else { 0.0 };
                }
            }
            let ok = cholesky(&mut ws.a, q);
            debug_assert!(ok, "I + G/σ² is SPD");
            matmul_tn(l, &ws.zr, q, q, 1, &mut ws.w);
            ws.u.copy_from_slice(&ws.w);
            chol_solve(&ws.a, q, &mut ws.u);
            let wu: f64 = ws.w.iter().zip(&ws.u).map(|(a, b)| a * b).sum();
            let quad = (rr - wu / s2) / s2;
            ll += -0.5 * (st.n * (LN_2PI + s2.ln()) + chol_logdet(&ws.a, q) + quad);

            if let Some(acc) = acc.as_deref_mut() {
                // b̂ = L u / σ², C = L A⁻¹ L'
                matmul(l, &ws.u, q, q, 1, &mut ws.bhat);
                ws.bhat.iter_mut().for_each(|v| *v /= s2);
                chol_inverse(&ws.a, q, &mut ws.ainv, &mut ws.col);
                matmul(l, &ws.ainv, q, q, q, &mut ws.tmp);
                for i in 0..q {
                    for j in 0..q {
                        let mut s = 0.0;
                        for k in 0..q {
                            s += ws.tmp[i * q + k] * l[j * q + k];
                        }
                        ws.c[i * q + j] = s;
                    }
                }
                let mut tr_cu = 0.0;
                let mut b_u_b = 0.0;
                let mut b_zty = 0.0;
                for i in 0..q {
                    for j in 0..q {
                        acc.sum_bb[i * q + j] += ws.bhat[i] * ws.bhat[j] + ws.c[i * q + j];
                        tr_cu += ws.c[i * q + j] * st.ztz[j * q + i];
                        b_u_b += ws.bhat[i] * st.ztz[i * q + j] * ws.bhat[j];
                    }
                    b_zty += ws.bhat[i] * st.zty[i];
                }
                for j in 0..p {
                    let mut s = st.xty[j];
                    for a in 0..q {
                        s -= st.ztx[a * p + j] * ws.bhat[a];
                    }
                    acc.h[j] += s;
                }
                acc.s1 += st.yty - 2.0 * b_zty + b_u_b + tr_cu;
            }
        }
        ll
    }

    fn solve_fixed(&self, mat: &[f64], rhs: &[f64]) -> Result<Vec<f64>, LmmError> {
        solve_spd_ridged(mat, rhs, self.p)
    }

    fn m_step(&self, acc: &Accum, m: f64) -> Result<Params, LmmError> {
        let (p, q) = (self.p, self.q);
        let beta = self.solve_fixed(&self.xtx_total, &acc.h)?;
        let mut bxb = 0.0;
        let mut bh = 0.0;
        for i in 0..p {
            bh += beta[i] * acc.h[i];
            for j in 0..p {
                bxb += beta[i] * self.xtx_total[i * p + j] * beta[j];
            }
        }
        let sigma2 = (acc.s1 - 2.0 * bh + bxb) / self.n_obs;
        let b_cov: Vec<f64> = acc.sum_bb.iter().map(|v| v / m).collect();
        Ok(Params::new(beta, b_cov, sigma2, q))
    }

    /// Generalized least squares for β at fixed variance parameters.
    fn gls_beta(&self, par: &Params, ws: &mut Workspace) -> Result<Vec<f64>, LmmError> {
        let (p, q) = (self.p, self.q);
        let s2 = par.sigma2;
        let l = &par.b_root;
        let mut lhs = vec![0.0; p * p];
        let mut rhs = vec![0.0; p];
        let mut cx = vec![0.0; q * p];
        for st in self.stats {
            matmul(&st.ztz, l, q, q, q, &mut ws.tmp);
            matmul_tn(l, &ws.tmp, q, q, q, &mut ws.g);
            for i in 0..q {
                for j in 0..q {
                    ws.a[i * q + j] = ws.g[i * q + j] / s2 + if i == j { 1.0 } else { 0.0 };
                }
            }
            cholesky(&mut ws.a, q);
            chol_inverse(&ws.a, q, &mut ws.ainv, &mut ws.col);
            matmul(l, &ws.ainv, q, q, q, &mut ws.tmp);
            for i in 0..q {
                for j in 0..q {
                    let mut s = 0.0;
                    for k in 0..q {
                        s += ws.tmp[i * q + k] * l[j * q + k];
                    }
                    ws.c[i * q + j] = s;
                }
            }
            // X'V⁻¹X σ² = X'X − (Z'X)' C (Z'X) / σ²
            matmul(&ws.c, &st.ztx, q, q, p, &mut cx);
            for i in 0..p {
                for j in 0..p {
                    let mut s = 0.0;
                    for a in 0..q {
                        s += st.ztx[a * p + i] * cx[a * p + j];
                    }
                    lhs[i * p + j] += st.xtx[i * p + j] - s / s2;
                }
                let mut s = 0.0;
                for a in 0..q {
                    let mut cz = 0.0;
                    for b in 0..q {
                        cz += ws.c[a * q + b] * st.zty[b];
                    }
                    s += st.ztx[a * p + i] * cz;
                }
                rhs[i] += st.xty[i] - s / s2;
            }
        }
        self.solve_fixed(&lhs, &rhs)
    }
}

fn solve_spd_ridged(mat: &[f64], rhs: &[f64], p: usize) -> Result<Vec<f64>, LmmError> {
    let mut l = mat.to_vec();
    let mut x = rhs.to_vec();
    if cholesky(&mut l, p) {
        chol_solve(&l, p, &mut x);
        return Ok(x);
    }
    let scale = (0..p)
        .map(|i| mat[i * p + i].abs())
        .fold(0.0, f64::max)
        .max(1.0);
    l.copy_from_slice(mat);
    for i in 0..p {
        l[i * p + i] += RIDGE * scale;
    }
    if !cholesky(&mut l, p) {
        return Err(LmmError::SingularDesign);
    }
    x.copy_from_slice(rhs);
    chol_solve(&l, p, &mut x);
    Ok(x)
}

/// Fits by EM; see [`fit_lmm_traced`] for the log-likelihood trace.
pub fn fit_lmm(design: &LmmDesign, series: &[&[Obs]]) -> Result<LmmFit, LmmError> {
    fit_lmm_traced(design, series, &EmOptions::default()).map(|(f, _)| f)
}

/// Fits by EM and returns the marginal log-likelihood after each parameter
/// update (first entry: the initial values, last entry: the returned fit).
pub fn fit_lmm_traced(
    design: &LmmDesign,
    series: &[&[Obs]],
    opts: &EmOptions,
) -> Result<(LmmFit, Vec<f64>), LmmError> {
    let p = design.n_fixed();
    let q = design.n_random();
    let observed: Vec<&[Obs]> = series.iter().copied().filter(|s| !s.is_empty()).collect();
    let n_obs: usize = observed.iter().map(|s| s.len()).sum();
    let needed = design.min_observations();
    if observed.len() < 2 || n_obs < needed {
        return Err(LmmError::InsufficientData {
            subjects: observed.len(),
            obs: n_obs,
            needed,
        });
    }
    let stats: Vec<SubjectStats> = observed
        .iter()
        .map(|s| SubjectStats::new(design, s))
        .collect();
    let mut xtx_total = vec![0.0; p * p];
    let mut xty_total = vec![0.0; p];
    for st in &stats {
        for (a, b) in xtx_total.iter_mut().zip(&st.xtx) {
            *a += b;
        }
        for (a, b) in xty_total.iter_mut().zip(&st.xty) {
            *a += b;
        }
    }
    let model = Model {
        p,
        q,
        stats: &stats,
        xtx_total,
        n_obs: n_obs as f64,
    };

    // pooled OLS start
    let beta0 = model.solve_fixed(&model.xtx_total, &xty_total)?;
    let mut rss = 0.0;
    let mut mean_resid = Vec::with_capacity(observed.len());
    let mut x = vec![0.0; p];
    for s in &observed {
        let mut sum = 0.0;
        for o in s.iter() {
            design.x_row(o.time, &mut x);
            let fit: f64 = x.iter().zip(&beta0).map(|(a, b)| a * b).sum();
            let r = o.value - fit;
            rss += r * r;
            sum += r;
        }
        mean_resid.push(sum / s.len() as f64);
    }
    let m = observed.len() as f64;
    let mr_mean = mean_resid.iter().sum::<f64>() / m;
    let between = (mean_resid
        .iter()
        .map(|r| (r - mr_mean).powi(2))
        .sum::<f64>()
        / (m - 1.0))
        .max(INIT_FLOOR);
    let within = (rss / n_obs as f64).max(INIT_FLOOR);
    let mut b0 = vec![0.0; q * q];
    for i in 0..q {
        b0[i * q + i] = between;
    }
    let mut par = Params::new(beta0, b0, within, q);

    let mut ws = Workspace::new(q);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut prev = f64::NEG_INFINITY;
    for it in 0..opts.max_iter {
        let mut acc = Accum {
            sum_bb: vec![0.0; q * q],
            h: vec![0.0; p],
            s1: 0.0,
        };
        let ll = model.sweep(&par, &mut ws, Some(&mut acc));
        trace.push(ll);
        if it > 0 && (ll - prev).abs() < opts.tol * prev.abs().max(1.0) {
            converged = true;
            break;
        }
        prev = ll;
        par = model.m_step(&acc, m)?;
        iterations = it + 1;
    }
    if !converged {
        let ll = model.sweep(&par, &mut ws, None);
        trace.push(ll);
        converged = ll.is_finite() && (ll - prev).abs() < opts.tol * prev.abs().max(1.0);
    }
    // β at its exact profile optimum for the final variance parameters
    let beta = model.gls_beta(&par, &mut ws)?;
    par.beta = beta;
    let loglik = model.sweep(&par, &mut ws, None);
    trace.push(loglik);
    let fit = LmmFit {
        beta: par.beta,
        b_cov: par.b_cov,
        sigma2: par.sigma2,
        loglik,
        converged: converged && loglik.is_finite(),
        iterations,
        n_subjects: observed.len(),
        n_obs,
    };
    Ok((fit, trace))
}

/// BLUP `b̂ = (σ² I + B Z'Z)⁻¹ B Z'(y − Xβ)`, equal to `B Z' V⁻¹ (y − Xβ)`.
/// An empty series yields the zero vector.
pub fn predict_random_effects(fit: &LmmFit, design: &LmmDesign, series: &[Obs]) -> Vec<f64> {
    let p = design.n_fixed();
    let q = design.n_random();
    let mut zr = vec![0.0; q];
    if series.is_empty() {
        return zr;
    }
    let mut ztz = vec![0.0; q * q];
    let mut x = vec![0.0; p];
    let mut z = vec![0.0; q];
    for o in series {
        design.x_row(o.time, &mut x);
        design.z_row(o.time, &mut z);
        let r = o.value - x.iter().zip(&fit.beta).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..q {
            zr[i] += z[i] * r;
            for j in 0..q {
                ztz[i * q + j] += z[i] * z[j];
            }
        }
    }
    let mut m = vec![0.0; q * q];
    matmul(&fit.b_cov, &ztz, q, q, q, &mut m);
    for i in 0..q {
        m[i * q + i] += fit.sigma2;
    }
    let mut rhs = vec![0.0; q];
    matmul(&fit.b_cov, &zr, q, q, 1, &mut rhs);
    if !lu_solve(&mut m, q, &mut rhs) {
        return vec![0.0; q];
    }
    rhs
}

/// Random-effect features, one row of length q_r per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomEffectFeatures {
    pub rows: Vec<Vec<f64>>,
}

impl RandomEffectFeatures {
    /// Column `j` across subjects (j = 0 is the random intercept).
    pub fn feature(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

pub fn extract_features(
    fit: &LmmFit,
    design: &LmmDesign,
    series: &[&[Obs]],
) -> RandomEffectFeatures {
    RandomEffectFeatures {
        rows: series
            .iter()
            .map(|s| predict_random_effects(fit, design, s))
            .collect(),
    }
}

/// Name of random-effect feature `j`, e.g. `bi0` for the random intercept.
pub fn feature_name(j: usize) -> String {
    format!("bi{j}")
}
