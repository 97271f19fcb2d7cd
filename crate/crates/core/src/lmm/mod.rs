//! Two-level linear mixed models fitted by maximum likelihood.
//!
//! Random effects are grouped in blocks; all columns of a block share one
//! variance and blocks are independent. The likelihood is profiled over the
//! fixed effects and the residual variance, leaving the relative standard
//! deviations `theta` (block sd / residual sd) to a Nelder-Mead search. Per
//! group only the cross-products `Z'Z`, `Z'X`, `Z'y` are needed, through the
//! Woodbury identity with `M = I + L Z'Z L`, `L = diag(theta)`.

mod data;
pub mod sim;

pub use data::{fmt_num, Dataset};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

pub const INTERCEPT: &str = "(intercept)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmmError {
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("fixed-effect design is singular (aliased columns: {0})")]
    SingularDesign(String),
    #[error("need at least two groups, found {0}")]
    TooFewGroups(usize),
    #[error("{n} usable observations for {p} fixed effects")]
    TooFewObservations { n: usize, p: usize },
    #[error("variance components are unidentified: every group has a single observation")]
    Unidentified,
    #[error("models are not nested: {0}")]
    NotNested(String),
    #[error("non-convergence suspected: general model log-likelihood {general} below restricted {restricted}")]
    NonConvergenceSuspected { general: f64, restricted: f64 },
    #[error("information criteria need at least one parameter")]
    NoParameters,
    #[error("optimizer failure: {0}")]
    Optimizer(String),
}

/// Random-effect columns sharing one variance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomBlock {
    pub name: String,
    /// Column names; [`INTERCEPT`] denotes the constant.
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmmSpec {
    pub response: String,
    /// Fixed regressors besides the intercept, which is always included.
    pub fixed: Vec<String>,
    pub random: Vec<RandomBlock>,
}

/// The three nested random-effect structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelLevel {
    /// Random intercept.
    I,
    /// Plus battery-cost slopes.
    II,
    /// Plus converter slopes.
    III,
}

impl FromStr for ModelLevel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "I" | "1" => Ok(Self::I),
            "II" | "2" => Ok(Self::II),
            "III" | "3" => Ok(Self::III),
            other => Err(format!("unknown model `{other}` (I|II|III)")),
        }
    }
}

impl fmt::Display for ModelLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::I => "I",
            Self::II => "II",
            Self::III => "III",
        })
    }
}

impl LmmSpec {
    pub fn random_intercept(response: &str, fixed: &[String]) -> Self {
        Self {
            response: response.into(),
            fixed: fixed.to_vec(),
            random: vec![RandomBlock {
                name: "intercept".into(),
                columns: vec![INTERCEPT.into()],
            }],
        }
    }

    /// Model I, II or III. With `pooled`, each dummy block has one variance;
    /// otherwise every dummy gets its own.
    pub fn model(
        level: ModelLevel,
        response: &str,
        fixed: &[String],
        cost_dummies: &[String],
        converter_dummies: &[String],
        pooled: bool,
    ) -> Self {
        let mut spec = Self::random_intercept(response, fixed);
        let mut add = |name: &str, cols: &[String]| {
            if cols.is_empty() {
                return;
            }
            if pooled {
                spec.random.push(RandomBlock {
                    name: name.into(),
                    columns: cols.to_vec(),
                });
            } else {
                for c in cols {
                    spec.random.push(RandomBlock {
                        name: format!("{name}:{c}"),
                        columns: vec![c.clone()],
                    });
                }
            }
        };
        if level != ModelLevel::I {
            add("battery_cost", cost_dummies);
        }
        if level == ModelLevel::III {
            add("converter", converter_dummies);
        }
        spec
    }

    fn random_columns(&self) -> Vec<(usize, &str)> {
        self.random
            .iter()
            .enumerate()
            .flat_map(|(b, blk)| blk.columns.iter().map(move |c| (b, c.as_str())))
            .collect()
    }
}

/// Response, designs and group index extracted from a dataset.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    /// Block of each random column.
    block_of: Vec<usize>,
    group: Vec<usize>,
    group_names: Vec<String>,
}

fn lookup(data: &Dataset, name: &str) -> Result<Option<usize>, LmmError> {
    if name == INTERCEPT {
        Ok(None)
    } else {
        data.column(name)
            .map(Some)
            .ok_or_else(|| LmmError::MissingColumn(name.into()))
    }
}

fn value(row: &[f64], col: Option<usize>) -> f64 {
    col.map_or(1.0, |c| row[c])
}

pub(crate) fn design(data: &Dataset, spec: &LmmSpec) -> Result<Design, LmmError> {
    let yc = data
        .column(&spec.response)
        .ok_or_else(|| LmmError::MissingColumn(spec.response.clone()))?;
    let mut xcols = vec![None];
    for f in &spec.fixed {
        xcols.push(lookup(data, f)?);
    }
    let rcols = spec.random_columns();
    let zcols: Vec<Option<usize>> = rcols
        .iter()
        .map(|(_, c)| lookup(data, c))
        .collect::<Result<_, _>>()?;
    let used: Vec<usize> = (0..data.rows.len())
        .filter(|&i| {
            let r = &data.rows[i];
            r[yc].is_finite() && xcols.iter().chain(&zcols).all(|&c| value(r, c).is_finite())
        })
        .collect();
    let (n, p, q) = (used.len(), xcols.len(), zcols.len());
    let mut names: BTreeMap<&str, usize> = BTreeMap::new();
    let mut group_names = Vec::new();
    let mut group = Vec::with_capacity(n);
    for &i in &used {
        let g = data.groups[i].as_str();
        let next = names.len();
        let id = *names.entry(g).or_insert_with(|| {
            group_names.push(g.to_string());
            next
        });
        group.push(id);
    }
    let y = DVector::from_iterator(n, used.iter().map(|&i| data.rows[i][yc]));
    let x = DMatrix::from_fn(n, p, |r, c| value(&data.rows[used[r]], xcols[c]));
    let z = DMatrix::from_fn(n, q, |r, c| value(&data.rows[used[r]], zcols[c]));
    Ok(Design {
        y,
        x,
        z,
        block_of: rcols.iter().map(|(b, _)| *b).collect(),
        group,
        group_names,
    })
}

/// Cross-products needed by the profiled likelihood.
#[derive(Debug, Clone)]
struct Suff {
    n: usize,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    groups: Vec<GroupSuff>,
    block_of: Vec<usize>,
}

#[derive(Debug, Clone)]
struct GroupSuff {
    ztz: DMatrix<f64>,
    ztx: DMatrix<f64>,
    zty: DVector<f64>,
}

impl Suff {
    fn new(d: &Design) -> Self {
        let (p, q) = (d.x.ncols(), d.z.ncols());
        let mut groups: Vec<GroupSuff> = (0..d.group_names.len())
            .map(|_| GroupSuff {
                ztz: DMatrix::zeros(q, q),
                ztx: DMatrix::zeros(q, p),
                zty: DVector::zeros(q),
            })
            .collect();
        for (i, &g) in d.group.iter().enumerate() {
            let z = d.z.row(i);
            let x = d.x.row(i);
            let gs = &mut groups[g];
            for a in 0..q {
                for b in 0..q {
                    gs.ztz[(a, b)] += z[a] * z[b];
                }
                for b in 0..p {
                    gs.ztx[(a, b)] += z[a] * x[b];
                }
                gs.zty[a] += z[a] * d.y[i];
            }
        }
        Suff {
            n: d.y.len(),
            xtx: d.x.transpose() * &d.x,
            xty: d.x.transpose() * &d.y,
            yty: d.y.dot(&d.y),
            groups,
            block_of: d.block_of.clone(),
        }
    }

    fn lambda(&self, theta: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.block_of.len(),
            self.block_of.iter().map(|&b| theta[b].abs()),
        )
    }
}

/// Quantities of the likelihood at fixed `theta`.
struct Profile {
    beta: DVector<f64>,
    /// `X' V* ^-1 X` with `V* = V / sigma^2`.
    xvx: DMatrix<f64>,
    /// `r' V*^-1 r`.
    rss: f64,
    logdet: f64,
}

fn profile(s: &Suff, theta: &[f64]) -> Option<Profile> {
    let lam = s.lambda(theta);
    let q = lam.len();
    let mut xvx = s.xtx.clone();
    let mut xvy = s.xty.clone();
    let mut yvy = s.yty;
    let mut logdet = 0.0;
    for g in &s.groups {
        // M = I + L Z'Z L
        let mut m = DMatrix::identity(q, q);
        for a in 0..q {
            for b in 0..q {
                m[(a, b)] += lam[a] * g.ztz[(a, b)] * lam[b];
            }
        }
        let chol = Cholesky::new(m)?;
        let ldiag: DVector<f64> = chol.l().diagonal();
        logdet += 2.0 * ldiag.iter().map(|v: &f64| v.ln()).sum::<f64>();
        let lzx = DMatrix::from_fn(q, g.ztx.ncols(), |a, b| lam[a] * g.ztx[(a, b)]);
        let lzy = DVector::from_fn(q, |a, _| lam[a] * g.zty[a]);
        let mzx = chol.solve(&lzx);
        let mzy = chol.solve(&lzy);
        xvx -= lzx.transpose() * &mzx;
        xvy -= lzx.transpose() * &mzy;
        yvy -= lzy.dot(&mzy);
    }
    let chol = Cholesky::new(xvx.clone())?;
    let beta = chol.solve(&xvy);
    let rss = (yvy - beta.dot(&xvy)).max(0.0);
    Some(Profile {
        beta,
        xvx,
        rss,
        logdet,
    })
}

/// Log-likelihood with `beta` and `sigma^2` profiled out.
fn profiled_loglik(s: &Suff, theta: &[f64]) -> f64 {
    match profile(s, theta) {
        Some(p) if p.rss > 0.0 => {
            let n = s.n as f64;
            -0.5 * n * ((2.0 * std::f64::consts::PI).ln() + 1.0 + (p.rss / n).ln()) - 0.5 * p.logdet
        }
        _ => f64::NEG_INFINITY,
    }
}

/// Log-likelihood at residual sd `sigma` and block sds `tau`, `beta` profiled.
fn full_loglik(s: &Suff, sigma: f64, tau: &[f64]) -> f64 {
    if sigma <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let theta: Vec<f64> = tau.iter().map(|t| t / sigma).collect();
    match profile(s, &theta) {
        Some(p) => {
            let n = s.n as f64;
            -0.5 * n * (2.0 * std::f64::consts::PI).ln()
                - n * sigma.ln()
                - 0.5 * p.logdet
                - p.rss / (2.0 * sigma * sigma)
        }
        None => f64::NEG_INFINITY,
    }
}

struct NegLogLik<'a>(&'a Suff);

impl CostFunction for NegLogLik<'_> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, theta: &Self::Param) -> Result<f64, argmin::core::Error> {
        let v = -profiled_loglik(self.0, theta);
        Ok(if v.is_finite() { v } else { f64::MAX / 4.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Stop when the log-likelihood spread over the search simplex falls below this.
    pub convergence_tol: f64,
    pub max_iter: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            convergence_tol: 1e-10,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coef {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    /// Two-sided, normal approximation.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarComp {
    pub name: String,
    pub sd: f64,
    /// NaN when the estimate sits on the zero boundary.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub spec: LmmSpec,
    pub fixed: Vec<Coef>,
    pub random: Vec<VarComp>,
    pub residual: VarComp,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub n_groups: usize,
    /// Fixed effects plus variance parameters (including the residual).
    pub n_params: usize,
    pub converged: bool,
    pub iterations: u64,
    /// Relative sds per block at the optimum.
    pub theta: Vec<f64>,
    /// Predicted random effects per group, one entry per random column.
    pub blups: BTreeMap<String, Vec<f64>>,
}

impl LmmFit {
    pub fn coefficient(&self, name: &str) -> Option<&Coef> {
        self.fixed.iter().find(|c| c.name == name)
    }

    pub fn random_sd(&self, block: &str) -> Option<f64> {
        self.random.iter().find(|v| v.name == block).map(|v| v.sd)
    }

    pub fn beta(&self) -> Vec<f64> {
        self.fixed.iter().map(|c| c.estimate).collect()
    }
}

fn normal_p(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * (1.0 - n.cdf(z.abs()))
}

/// AIC and BIC from a log-likelihood, parameter count and sample size.
pub fn information_criteria_raw(
    log_likelihood: f64,
    k: usize,
    n: usize,
) -> Result<(f64, f64), LmmError> {
    if k == 0 {
        return Err(LmmError::NoParameters);
    }
    let k = k as f64;
    Ok((
        -2.0 * log_likelihood + 2.0 * k,
        -2.0 * log_likelihood + k * (n as f64).ln(),
    ))
}

pub fn information_criteria(fit: &LmmFit) -> (f64, f64) {
    (fit.aic, fit.bic)
}

/// Names of fixed columns whose removal makes the design full rank, scanning
/// left to right after the intercept.
pub fn aliased_columns(data: &Dataset, spec: &LmmSpec) -> Result<Vec<String>, LmmError> {
    let d = design(
        data,
        &LmmSpec {
            random: Vec::new(),
            ..spec.clone()
        },
    )?;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..d.x.ncols() {
        let mut v: DVector<f64> = d.x.column(j).into_owned();
        let norm0 = v.norm();
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        // second pass for numerical stability
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= 1e-9 * norm0 {
            if j > 0 {
                out.push(spec.fixed[j - 1].clone());
            }
        } else {
            basis.push(v / norm);
        }
    }
    Ok(out)
}

/// Maximum-likelihood fit.
pub fn fit_ml(data: &Dataset, spec: &LmmSpec, opts: &FitOptions) -> Result<LmmFit, LmmError> {
    let d = design(data, spec)?;
    let (n, p) = (d.x.nrows(), d.x.ncols());
    if d.group_names.len() < 2 {
        return Err(LmmError::TooFewGroups(d.group_names.len()));
    }
    if n <= p {
        return Err(LmmError::TooFewObservations { n, p });
    }
    if !spec.random.is_empty() {
        let mut sizes = vec![0usize; d.group_names.len()];
        for &g in &d.group {
            sizes[g] += 1;
        }
        if sizes.iter().all(|&s| s == 1) {
            return Err(LmmError::Unidentified);
        }
    }
    let alias = aliased_columns(data, spec)?;
    if !alias.is_empty() {
        return Err(LmmError::SingularDesign(alias.join(", ")));
    }
    let s = Suff::new(&d);
    let nb = spec.random.len();

    // OLS start with the variance split evenly between the levels: theta = 1.
    let (theta, converged, iterations) = if nb == 0 {
        (Vec::new(), true, 0)
    } else {
        let mut start: Vec<f64> = vec![1.0; nb];
        let mut total_iter = 0;
        let mut converged = false;
        for _ in 0..2 {
            let mut simplex = vec![start.clone()];
            for i in 0..nb {
                let mut v = start.clone();
                v[i] += 0.5 * start[i].abs().max(0.1);
                simplex.push(v);
            }
            let solver = NelderMead::new(simplex)
                .with_sd_tolerance(opts.convergence_tol)
                .map_err(|e| LmmError::Optimizer(e.to_string()))?;
            let res = Executor::new(NegLogLik(&s), solver)
                .configure(|st| st.max_iters(opts.max_iter))
                .run()
                .map_err(|e| LmmError::Optimizer(e.to_string()))?;
            let st = res.state();
            total_iter += st.get_iter();
            converged = matches!(
                st.get_termination_status(),
                TerminationStatus::Terminated(TerminationReason::SolverConverged)
            );
            start = st
                .get_best_param()
                .cloned()
                .unwrap_or(start)
                .iter()
                .map(|t| t.abs())
                .collect();
        }
        // components whose removal costs no likelihood are set to zero
        let mut best = profiled_loglik(&s, &start);
        for b in 0..nb {
            let mut t = start.clone();
            t[b] = 0.0;
            let v = profiled_loglik(&s, &t);
            if v >= best - opts.convergence_tol.max(1e-12) * best.abs().max(1.0) {
                start = t;
                best = best.max(v);
            }
        }
        (start, converged, total_iter)
    };

    let prof = profile(&s, &theta).ok_or_else(|| LmmError::SingularDesign("at optimum".into()))?;
    let nf = n as f64;
    let sigma2 = prof.rss / nf;
    let sigma = sigma2.sqrt();
    let loglik = profiled_loglik(&s, &theta);
    let cov = prof
        .xvx
        .clone()
        .try_inverse()
        .ok_or_else(|| LmmError::SingularDesign("information matrix".into()))?
        * sigma2;
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(spec.fixed.iter().cloned());
    let fixed = names
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let se = cov[(i, i)].max(0.0).sqrt();
            let z = prof.beta[i] / se;
            Coef {
                name,
                estimate: prof.beta[i],
                std_error: se,
                z,
                p_value: normal_p(z),
            }
        })
        .collect();

    let tau: Vec<f64> = theta.iter().map(|t| t * sigma).collect();
    let ses = variance_std_errors(&s, sigma, &tau);
    let random = spec
        .random
        .iter()
        .enumerate()
        .map(|(b, blk)| VarComp {
            name: blk.name.clone(),
            sd: tau[b],
            std_error: ses[b + 1],
        })
        .collect();
    let residual = VarComp {
        name: "residual".into(),
        sd: sigma,
        std_error: ses[0],
    };

    let k = p + nb + 1;
    let (aic, bic) = information_criteria_raw(loglik, k, n)?;
    let blups = predict_effects(&d, &theta, &prof.beta);
    Ok(LmmFit {
        spec: spec.clone(),
        fixed,
        random,
        residual,
        log_likelihood: loglik,
        aic,
        bic,
        n_obs: n,
        n_groups: d.group_names.len(),
        n_params: k,
        converged,
        iterations,
        theta,
        blups,
    })
}

/// Standard errors of `(sigma, tau...)` from a central-difference Hessian of
/// the log-likelihood. Parameters on the zero boundary get NaN.
fn variance_std_errors(s: &Suff, sigma: f64, tau: &[f64]) -> Vec<f64> {
    let mut params = vec![sigma];
    params.extend_from_slice(tau);
    let free: Vec<usize> = (0..params.len())
        .filter(|&i| params[i] > 1e-8 * sigma)
        .collect();
    let f = |v: &[f64]| full_loglik(s, v[0], &v[1..]);
    let m = free.len();
    let h: Vec<f64> = free.iter().map(|&i| 1e-4 * params[i]).collect();
    let mut hess = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let val = if a == b {
                let mut p1 = params.clone();
                let mut m1 = params.clone();
                p1[free[a]] += h[a];
                m1[free[a]] -= h[a];
                (f(&p1) - 2.0 * f(&params) + f(&m1)) / (h[a] * h[a])
            } else {
                let mut pp = params.clone();
                let mut pm = params.clone();
                let mut mp = params.clone();
                let mut mm = params.clone();
                pp[free[a]] += h[a];
                pp[free[b]] += h[b];
                pm[free[a]] += h[a];
                pm[free[b]] -= h[b];
                mp[free[a]] -= h[a];
                mp[free[b]] += h[b];
                mm[free[a]] -= h[a];
                mm[free[b]] -= h[b];
                (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * h[a] * h[b])
            };
            hess[(a, b)] = val;
            hess[(b, a)] = val;
        }
    }
    let mut out = vec![f64::NAN; params.len()];
    if let Some(inv) = (-hess).try_inverse() {
        for (k, &i) in free.iter().enumerate() {
            let v = inv[(k, k)];
            if v > 0.0 {
                out[i] = v.sqrt();
            }
        }
    }
    out
}

fn predict_effects(d: &Design, theta: &[f64], beta: &DVector<f64>) -> BTreeMap<String, Vec<f64>> {
    let q = d.z.ncols();
    let lam = DVector::from_iterator(q, d.block_of.iter().map(|&b| theta[b].abs()));
    let r = &d.y - &d.x * beta;
    let ng = d.group_names.len();
    let mut ztz = vec![DMatrix::<f64>::zeros(q, q); ng];
    let mut ztr = vec![DVector::<f64>::zeros(q); ng];
    for (i, &g) in d.group.iter().enumerate() {
        let z = d.z.row(i);
        for a in 0..q {
            for b in 0..q {
                ztz[g][(a, b)] += z[a] * z[b];
            }
            ztr[g][a] += z[a] * r[i];
        }
    }
    let mut out = BTreeMap::new();
    for g in 0..ng {
        let mut m = DMatrix::identity(q, q);
        for a in 0..q {
            for b in 0..q {
                m[(a, b)] += lam[a] * ztz[g][(a, b)] * lam[b];
            }
        }
        let lzr = DVector::from_fn(q, |a, _| lam[a] * ztr[g][a]);
        let u = match Cholesky::new(m) {
            Some(c) => c.solve(&lzr).component_mul(&lam),
            None => DVector::zeros(q),
        };
        out.insert(d.group_names[g].clone(), u.iter().copied().collect());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictMode {
    Fixed,
    Full,
}

impl FromStr for PredictMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "full" => Ok(Self::Full),
            other => Err(format!("unknown prediction mode `{other}` (fixed|full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub values: Vec<f64>,
    /// Row's group was not in the fit; the fixed prediction was used.
    pub fell_back: Vec<bool>,
}

/// Predictions for every row of `data`; rows with missing regressors give NaN.
pub fn predict(fit: &LmmFit, data: &Dataset, mode: PredictMode) -> Result<Predictions, LmmError> {
    let xcols: Vec<Option<usize>> = std::iter::once(Ok(None))
        .chain(fit.spec.fixed.iter().map(|c| lookup(data, c)))
        .collect::<Result<_, _>>()?;
    let rcols = fit.spec.random_columns();
    let zcols: Vec<Option<usize>> = match mode {
        PredictMode::Fixed => Vec::new(),
        PredictMode::Full => rcols
            .iter()
            .map(|(_, c)| lookup(data, c))
            .collect::<Result<_, _>>()?,
    };
    let beta = fit.beta();
    let mut values = Vec::with_capacity(data.rows.len());
    let mut fell_back = Vec::with_capacity(data.rows.len());
    for (row, g) in data.rows.iter().zip(&data.groups) {
        let mut v: f64 = xcols
            .iter()
            .zip(&beta)
            .map(|(&c, b)| value(row, c) * b)
            .sum();
        let mut fb = false;
        if mode == PredictMode::Full {
            match fit.blups.get(g) {
                Some(u) => {
                    v += zcols
                        .iter()
                        .zip(u)
                        .map(|(&c, u)| value(row, c) * u)
                        .sum::<f64>()
                }
                None => fb = true,
            }
        }
        values.push(v);
        fell_back.push(fb);
    }
    Ok(Predictions { values, fell_back })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrTest {
    pub statistic: f64,
    pub dof: usize,
    /// A variance component is tested at zero; the chi-square reference is
    /// then conservative (the null law is a mixture).
    pub boundary: bool,
    /// Naive chi-square p-value.
    pub p_value: f64,
}

/// Likelihood-ratio test of `restricted` against `general`.
pub fn lr_test(restricted: &LmmFit, general: &LmmFit) -> Result<LrTest, LmmError> {
    let (r, g) = (&restricted.spec, &general.spec);
    if r.response != g.response {
        return Err(LmmError::NotNested("different responses".into()));
    }
    if restricted.n_obs != general.n_obs {
        return Err(LmmError::NotNested("different samples".into()));
    }
    if let Some(c) = r.fixed.iter().find(|c| !g.fixed.contains(c)) {
        return Err(LmmError::NotNested(format!(
            "fixed `{c}` missing from the general model"
        )));
    }
    let general_cols: Vec<&str> = g.random_columns().into_iter().map(|(_, c)| c).collect();
    if let Some((_, c)) = r
        .random_columns()
        .into_iter()
        .find(|(_, c)| !general_cols.contains(c))
    {
        return Err(LmmError::NotNested(format!(
            "random `{c}` missing from the general model"
        )));
    }
    if general.n_params < restricted.n_params {
        return Err(LmmError::NotNested(
            "general model has fewer parameters".into(),
        ));
    }
    let stat = 2.0 * (general.log_likelihood - restricted.log_likelihood);
    let tol = 1e-6 * general.log_likelihood.abs().max(1.0);
    if stat < -tol {
        return Err(LmmError::NonConvergenceSuspected {
            general: general.log_likelihood,
            restricted: restricted.log_likelihood,
        });
    }
    let stat = stat.max(0.0);
    let dof = general.n_params - restricted.n_params;
    let p_value = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(stat)
    };
    Ok(LrTest {
        statistic: stat,
        dof,
        boundary: g.random.len() > r.random.len(),
        p_value,
    })
}
