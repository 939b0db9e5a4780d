//! Circularly symmetric complex Gaussian mixtures and their EM fit.
//!
//! Density of one component:
//!
//! ```text
//! N_c(eta | zeta, Sigma) = exp(-(eta - zeta)^H Sigma^{-1} (eta - zeta)) / (pi^N det Sigma)
//! ```
//!
//! Everything is evaluated in log space through Cholesky factors.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{CMat, Cholesky};

const LN_PI: f64 = 1.144_729_885_849_400_2;

/// Mixture weights must sum to one within this slack.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGaussian {
    pub zeta: Vec<Complex64>,
    pub sigma: CMat,
}

impl ComplexGaussian {
    pub fn new(zeta: Vec<Complex64>, sigma: CMat) -> Result<Self> {
        if sigma.n != zeta.len() {
            return Err(Error::Numeric(format!(
                "mean has length {} but covariance is {}x{}",
                zeta.len(),
                sigma.n,
                sigma.n
            )));
        }
        if !sigma.is_hermitian(1e-12) {
            return Err(Error::Numeric(format!(
                "covariance is not Hermitian (defect {:.3e})",
                sigma.hermitian_defect()
            )));
        }
        Ok(Self { zeta, sigma })
    }

    pub fn dim(&self) -> usize {
        self.zeta.len()
    }
}

/// A component with its covariance factorized.
#[derive(Clone, Debug)]
pub struct FactoredGaussian {
    pub zeta: Vec<Complex64>,
    pub chol: Cholesky,
    /// `-N ln(pi) - ln det Sigma`.
    pub log_norm: f64,
}

impl FactoredGaussian {
    /// Factorizes `Sigma + shift * I`.
    pub fn new(g: &ComplexGaussian, shift: f64) -> Result<Self> {
        let chol = if shift == 0.0 {
            Cholesky::new(&g.sigma)?
        } else {
            Cholesky::new(&g.sigma.with_diagonal_shift(shift))?
        };
        let log_norm = -(g.dim() as f64) * LN_PI - chol.log_det();
        Ok(Self {
            zeta: g.zeta.clone(),
            chol,
            log_norm,
        })
    }

    pub fn centered(&self, eta: &[Complex64]) -> Vec<Complex64> {
        eta.iter().zip(&self.zeta).map(|(e, z)| e - z).collect()
    }

    pub fn log_density(&self, eta: &[Complex64]) -> f64 {
        self.log_norm - self.chol.quad_form(&self.centered(eta))
    }
}

/// `ln N_c(eta | zeta, Sigma)`.
pub fn log_density(eta: &[Complex64], g: &ComplexGaussian) -> Result<f64> {
    check_len(eta.len(), g.dim())?;
    Ok(FactoredGaussian::new(g, 0.0)?.log_density(eta))
}

/// The density itself; may underflow in high dimension.
pub fn density(eta: &[Complex64], g: &ComplexGaussian) -> Result<f64> {
    log_density(eta, g).map(f64::exp)
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Numeric(format!(
            "vector of length {got} for a {want}-dimensional model"
        )));
    }
    Ok(())
}

/// `ln sum exp(v)`, `-inf` when every entry is `-inf`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureModel {
    pub weights: Vec<f64>,
    pub components: Vec<ComplexGaussian>,
    /// Wavenumber the model was learned for.
    pub kappa_tag: f64,
    /// M-step regularization used in the fit.
    pub delta_reg: f64,
}

impl MixtureModel {
    pub fn new(weights: Vec<f64>, components: Vec<ComplexGaussian>, kappa_tag: f64, delta_reg: f64) -> Result<Self> {
        let m = Self {
            weights,
            components,
            kappa_tag,
            delta_reg,
        };
        m.validate()?;
        Ok(m)
    }

    /// Single zero-mean component with covariance `sigma * I`.
    pub fn isotropic(dim: usize, sigma: f64, kappa_tag: f64) -> Self {
        Self {
            weights: vec![1.0],
            components: vec![ComplexGaussian {
                zeta: vec![Complex64::default(); dim],
                sigma: CMat::scaled_identity(dim, sigma),
            }],
            kappa_tag,
            delta_reg: 0.0,
        }
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, ComplexGaussian::dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.components.len() {
            return Err(Error::Numeric(format!(
                "{} weights for {} components",
                self.weights.len(),
                self.components.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
            return Err(Error::Numeric(format!("mixture weight {w} outside (0, 1]")));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Numeric(format!("mixture weights sum to {total}")));
        }
        let n = self.dim();
        for (k, c) in self.components.iter().enumerate() {
            if c.dim() != n || c.sigma.n != n {
                return Err(Error::Numeric(format!(
                    "component {k} has dimension {} (expected {n})",
                    c.dim()
                )));
            }
        }
        Ok(())
    }

    /// Factorizes every `Sigma_k + shift * I`.
    pub fn factor(&self, shift: f64) -> Result<FactoredMixture> {
        let components = self
            .components
            .iter()
            .enumerate()
            .map(|(k, c)| {
                FactoredGaussian::new(c, shift).map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("component {k}: {m}")),
                    other => other,
                })
            })
            .collect::<Result<_>>()?;
        Ok(FactoredMixture {
            log_weights: self.weights.iter().map(|w| w.ln()).collect(),
            components,
        })
    }
}

/// A mixture with every covariance factorized, ready for repeated evaluation.
#[derive(Clone, Debug)]
pub struct FactoredMixture {
    pub log_weights: Vec<f64>,
    pub components: Vec<FactoredGaussian>,
}

impl FactoredMixture {
    pub fn dim(&self) -> usize {
        self.components[0].zeta.len()
    }

    /// `ln pi_k + ln N_c(eta | k)` for every component.
    pub fn weighted_log_densities(&self, eta: &[Complex64]) -> Result<Vec<f64>> {
        check_len(eta.len(), self.dim())?;
        Ok(self
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| lw + c.log_density(eta))
            .collect())
    }

    /// `ln sum_k pi_k N_c(eta | k)`.
    pub fn log_density(&self, eta: &[Complex64]) -> Result<f64> {
        let l = self.weighted_log_densities(eta)?;
        let v = log_sum_exp(&l);
        if !v.is_finite() {
            return Err(Error::Degenerate("every mixture component has zero density".into()));
        }
        Ok(v)
    }

    /// Posterior component weights together with the mixture log density.
    pub fn responsibilities_with_log(&self, eta: &[Complex64]) -> Result<(Vec<f64>, f64)> {
        let l = self.weighted_log_densities(eta)?;
        let total = log_sum_exp(&l);
        if !total.is_finite() {
            return Err(Error::Degenerate("every mixture component has zero density".into()));
        }
        Ok((l.iter().map(|x| (x - total).exp()).collect(), total))
    }

    pub fn responsibilities(&self, eta: &[Complex64]) -> Result<Vec<f64>> {
        self.responsibilities_with_log(eta).map(|r| r.0)
    }
}

/// `gamma_k(eta)` for a mixture.
pub fn responsibilities(eta: &[Complex64], model: &MixtureModel) -> Result<Vec<f64>> {
    model.factor(0.0)?.responsibilities(eta)
}

/// Model-error samples `F(q_n) - F_a(q_n)` for one wavenumber.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSampleSet {
    pub kappa: f64,
    /// Incident angle of the samples; `None` when angles were pooled.
    pub angle: Option<f64>,
    pub samples: Vec<Vec<Complex64>>,
}

impl ErrorSampleSet {
    pub fn new(kappa: f64, angle: Option<f64>, samples: Vec<Vec<Complex64>>) -> Result<Self> {
        let set = Self { kappa, angle, samples };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if let Some((i, s)) = self.samples.iter().enumerate().find(|(_, s)| s.len() != n) {
            return Err(Error::Numeric(format!(
                "sample {i} has length {} (expected {n})",
                s.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn mean(&self) -> Vec<Complex64> {
        let mut m = vec![Complex64::default(); self.dim()];
        for s in &self.samples {
            for (a, b) in m.iter_mut().zip(s) {
                *a += b;
            }
        }
        let inv = 1.0 / self.len().max(1) as f64;
        m.iter().map(|z| z * inv).collect()
    }

    /// `(1/N) sum (e_n - mean)(e_n - mean)^H`.
    pub fn pooled_covariance(&self) -> CMat {
        let weights = vec![1.0; self.len()];
        weighted_covariance(&self.samples, &weights, &self.mean())
    }
}

/// `(1/sum w) sum_n w_n (e_n - mu)(e_n - mu)^H`, exactly Hermitian.
fn weighted_covariance(samples: &[Vec<Complex64>], w: &[f64], mu: &[Complex64]) -> CMat {
    let n = mu.len();
    let mut c = CMat::zeros(n);
    let total: f64 = w.iter().sum();
    let mut d = vec![Complex64::default(); n];
    for (s, &wn) in samples.iter().zip(w) {
        if wn == 0.0 {
            continue;
        }
        for (di, (a, b)) in d.iter_mut().zip(s.iter().zip(mu)) {
            *di = a - b;
        }
        for i in 0..n {
            let di = d[i] * wn;
            let row = &mut c.data[i * n..i * n + i + 1];
            for (cij, dj) in row.iter_mut().zip(&d) {
                *cij += di * dj.conj();
            }
        }
    }
    for i in 0..n {
        for j in 0..=i {
            let v = c.data[i * n + j] / total;
            c.data[i * n + j] = v;
            c.data[j * n + i] = v.conj();
        }
        c.data[i * n + i].im = 0.0;
    }
    c
}

/// Fraction of `N_s` below which a component counts as collapsed.
pub const COLLAPSE_FRACTION: f64 = 1e-8;

/// Re-estimates weights, means and `delta`-regularized covariances from
/// responsibilities `gamma[n][k]`.
pub fn m_step(samples: &ErrorSampleSet, gamma: &[Vec<f64>], delta: f64) -> Result<MixtureModel> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::param("mixture.delta", format!("must be >= 0, got {delta}")));
    }
    let ns = samples.len();
    if ns == 0 || gamma.len() != ns {
        return Err(Error::Degenerate(format!(
            "{} responsibility rows for {ns} samples",
            gamma.len()
        )));
    }
    let k = gamma[0].len();
    let dim = samples.dim();
    let mut weights = Vec::with_capacity(k);
    let mut components = Vec::with_capacity(k);
    for c in 0..k {
        let w: Vec<f64> = gamma.iter().map(|g| g[c]).collect();
        let eff: f64 = w.iter().sum();
        if !(eff >= COLLAPSE_FRACTION * ns as f64) {
            return Err(Error::ComponentCollapse {
                component: c,
                effective: eff,
            });
        }
        let mut zeta = vec![Complex64::default(); dim];
        for (s, &wn) in samples.samples.iter().zip(&w) {
            for (z, e) in zeta.iter_mut().zip(s) {
                *z += e * wn;
            }
        }
        for z in &mut zeta {
            *z /= eff;
        }
        let mut sigma = weighted_covariance(&samples.samples, &w, &zeta);
        sigma.add_diagonal(delta);
        weights.push(eff / ns as f64);
        components.push(ComplexGaussian { zeta, sigma });
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(MixtureModel {
        weights,
        components,
        kappa_tag: samples.kappa,
        delta_reg: delta,
    })
}

/// `sum_n ln sum_k pi_k N_c(e_n | k)`.
pub fn log_likelihood(samples: &ErrorSampleSet, model: &MixtureModel) -> Result<f64> {
    let f = model.factor(0.0)?;
    samples.samples.iter().map(|s| f.log_density(s)).sum()
}

fn e_step(samples: &ErrorSampleSet, f: &FactoredMixture) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut gamma = Vec::with_capacity(samples.len());
    let mut ll = 0.0;
    for s in &samples.samples {
        let (g, l) = f.responsibilities_with_log(s)?;
        gamma.push(g);
        ll += l;
    }
    Ok((gamma, ll))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    pub k: usize,
    pub delta: f64,
    /// Stop when `|dL| <= tol (1 + |L|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Fresh initializations tried after a component collapse.
    pub max_restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            k: 4,
            delta: 0.0,
            tol: 1e-8,
            max_iter: 500,
            seed: 0,
            max_restarts: 5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmFit {
    /// Best-likelihood iterate.
    pub model: MixtureModel,
    /// Log-likelihood of every evaluated iterate of the successful run.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub restarts: usize,
}

/// `1e-6 * trace(pooled covariance) / N_d`.
pub fn default_delta(samples: &ErrorSampleSet) -> f64 {
    let c = samples.pooled_covariance();
    1e-6 * c.trace().re / c.n.max(1) as f64
}

fn initial_model(samples: &ErrorSampleSet, k: usize, delta: f64, rng: &mut ChaCha8Rng) -> Result<MixtureModel> {
    let mut pooled = samples.pooled_covariance();
    pooled.add_diagonal(delta);
    let picks = sample_indices(rng, samples.len(), k);
    let components = picks
        .iter()
        .map(|i| ComplexGaussian {
            zeta: samples.samples[i].clone(),
            sigma: pooled.clone(),
        })
        .collect();
    Ok(MixtureModel {
        weights: vec![1.0 / k as f64; k],
        components,
        kappa_tag: samples.kappa,
        delta_reg: delta,
    })
}

fn em_attempt(samples: &ErrorSampleSet, cfg: &EmConfig, seed: u64) -> Result<(MixtureModel, Vec<f64>, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = initial_model(samples, cfg.k, cfg.delta, &mut rng)?;
    let mut trace = Vec::new();
    let mut best: Option<(f64, MixtureModel)> = None;
    let mut converged = false;
    for it in 0..=cfg.max_iter {
        let f = model.factor(0.0)?;
        let (gamma, ll) = e_step(samples, &f)?;
        if best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, model.clone()));
        }
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (ll - prev).abs() <= cfg.tol * (1.0 + ll.abs()) {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if it == cfg.max_iter {
            break;
        }
        model = m_step(samples, &gamma, cfg.delta)?;
    }
    let (_, model) = best.expect("at least one iterate");
    Ok((model, trace, converged))
}

/// Expectation-maximization for a `K`-component complex mixture.
///
/// Starts from `K` distinct samples as means with the pooled covariance,
/// restarting with a derived seed whenever a component collapses.
pub fn fit_em(samples: &ErrorSampleSet, cfg: &EmConfig) -> Result<EmFit> {
    samples.validate()?;
    if cfg.k == 0 {
        return Err(Error::param("mixture.k", "must be >= 1"));
    }
    if samples.len() < cfg.k {
        return Err(Error::param(
            "mixture.k",
            format!(
                "{} components need at least as many samples, got {}",
                cfg.k,
                samples.len()
            ),
        ));
    }
    if !(cfg.delta >= 0.0) {
        return Err(Error::param(
            "mixture.delta",
            format!("must be >= 0, got {}", cfg.delta),
        ));
    }
    let mut last = None;
    for restart in 0..=cfg.max_restarts {
        let seed = cfg
            .seed
            .wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        match em_attempt(samples, cfg, seed) {
            Ok((model, trace, converged)) => {
                return Ok(EmFit {
                    model,
                    trace,
                    converged,
                    restarts: restart,
                })
            }
            Err(e @ Error::ComponentCollapse { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("restart loop ran"))
}

/// `(Re e_1, Im e_1, ..., Re e_N, Im e_N)`.
pub fn realify(e: &[Complex64]) -> Vec<f64> {
    e.iter().flat_map(|z| [z.re, z.im]).collect()
}

/// Real `2N x 2N` embedding with blocks `[[Re s, -Im s], [Im s, Re s]]`, row-major.
pub fn real_representation(sigma: &CMat) -> Result<Vec<Vec<f64>>> {
    if !sigma.is_hermitian(1e-12) {
        return Err(Error::Numeric(format!(
            "real embedding needs a Hermitian matrix (defect {:.3e})",
            sigma.hermitian_defect()
        )));
    }
    let n = sigma.n;
    let mut m = vec![vec![0.0; 2 * n]; 2 * n];
    for i in 0..n {
        for j in 0..n {
            let s = sigma.get(i, j);
            m[2 * i][2 * j] = s.re;
            m[2 * i][2 * j + 1] = -s.im;
            m[2 * i + 1][2 * j] = s.im;
            m[2 * i + 1][2 * j + 1] = s.re;
        }
    }
    Ok(m)
}

const MODEL_MAGIC: &str = "cgmm-v1";

fn push_row(out: &mut String, values: impl Iterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v:.16e}");
    }
    out.push('\n');
}

/// Serializes a model in the `cgmm-v1` text format.
pub fn model_to_string(model: &MixtureModel) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{MODEL_MAGIC} K={} Nd={} kappa={:.16e} delta={:.16e}",
        model.k(),
        model.dim(),
        model.kappa_tag,
        model.delta_reg
    );
    for (w, c) in model.weights.iter().zip(&model.components) {
        let _ = writeln!(out, "pi={w:.16e}");
        push_row(&mut out, c.zeta.iter().flat_map(|z| [z.re, z.im]));
        for i in 0..c.sigma.n {
            push_row(&mut out, c.sigma.row(i).iter().flat_map(|z| [z.re, z.im]));
        }
    }
    out
}

fn header_value<'a>(token: Option<&'a str>, key: &str) -> std::result::Result<&'a str, String> {
    token
        .and_then(|t| t.strip_prefix(key))
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| format!("header is missing `{key}=`"))
}

/// Parses the `cgmm-v1` format; `origin` names the source in errors.
pub fn model_from_str(text: &str, origin: &Path) -> Result<MixtureModel> {
    let fail = |m: String| Error::format(origin, m);
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| fail("empty model file".into()))?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some(MODEL_MAGIC) {
        return Err(fail(format!("expected `{MODEL_MAGIC}` header")));
    }
    let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| e.to_string());
    let parse_f = |s: &str| s.parse::<f64>().map_err(|e| e.to_string());
    let k = header_value(tok.next(), "K").and_then(parse_usize).map_err(fail)?;
    let nd = header_value(tok.next(), "Nd").and_then(parse_usize).map_err(fail)?;
    let kappa = header_value(tok.next(), "kappa").and_then(parse_f).map_err(fail)?;
    let delta = header_value(tok.next(), "delta").and_then(parse_f).map_err(fail)?;
    let row = |lines: &mut dyn Iterator<Item = (usize, &str)>, what: &str, want: usize| -> Result<Vec<f64>> {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| fail(format!("unexpected end of file reading {what}")))?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fail(format!("line {}: {e}", ln + 1)))?;
        if vals.len() != want {
            return Err(fail(format!(
                "line {}: {} values for {what} (expected {want})",
                ln + 1,
                vals.len()
            )));
        }
        Ok(vals)
    };
    let pairs = |v: Vec<f64>| -> Vec<Complex64> { v.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect() };
    let mut weights = Vec::with_capacity(k);
    let mut components = Vec::with_capacity(k);
    for c in 0..k {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| fail(format!("unexpected end of file before component {c}")))?;
        let w = l
            .trim()
            .strip_prefix("pi=")
            .ok_or_else(|| fail(format!("line {}: expected `pi=`", ln + 1)))?
            .parse::<f64>()
            .map_err(|e| fail(format!("line {}: {e}", ln + 1)))?;
        let zeta = pairs(row(&mut lines, "mean", 2 * nd)?);
        let mut data = Vec::with_capacity(nd * nd);
        for _ in 0..nd {
            data.extend(pairs(row(&mut lines, "covariance row", 2 * nd)?));
        }
        weights.push(w);
        components.push(ComplexGaussian {
            zeta,
            sigma: CMat { n: nd, data },
        });
    }
    if let Some((ln, _)) = lines.next() {
        return Err(fail(format!("line {}: trailing content after {k} components", ln + 1)));
    }
    let model = MixtureModel {
        weights,
        components,
        kappa_tag: kappa,
        delta_reg: delta,
    };
    model.validate().map_err(|e| fail(e.to_string()))?;
    Ok(model)
}

pub fn write_model(path: &Path, model: &MixtureModel) -> Result<()> {
    std::fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<MixtureModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text, path)
}
