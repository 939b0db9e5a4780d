//! Prior terms: the fractional power `A^s` of `A = a (-Laplacian)` with
//! Dirichlet conditions on `Omega`, and smoothed total variation.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScattererField};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerConfig {
    pub a_scale: f64,
    pub s: f64,
    pub lambda: f64,
    pub delta_tv: f64,
    /// Multiplier of the prior gradient in the update.
    pub weight: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            a_scale: 0.01,
            s: 1.5,
            lambda: 0.0,
            delta_tv: 1e-3,
            weight: 1.0,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &'static str, v: f64, ok: bool, what: &str| {
            if ok && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be {what}, got {v}")))
            }
        };
        check("reg.a_scale", self.a_scale, self.a_scale > 0.0, "> 0")?;
        check("reg.s", self.s, self.s > 0.0, "> 0")?;
        check("reg.lambda", self.lambda, self.lambda >= 0.0, ">= 0")?;
        check("reg.delta_tv", self.delta_tv, self.delta_tv > 0.0, "> 0")?;
        check("reg.weight", self.weight, self.weight >= 0.0, ">= 0")
    }
}

/// Type-I discrete sine transform `X_k = sum_n x_n sin(pi n k / (M + 1))` through an FFT of length `2(M + 1)`.
struct Dst1 {
    m: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Dst1 {
    fn new(m: usize, planner: &mut FftPlanner<f64>) -> Self {
        Self {
            m,
            fft: planner.plan_fft_forward(2 * (m + 1)),
        }
    }

    fn apply(&self, x: &mut [f64], buf: &mut Vec<Complex64>) {
        let m = self.m;
        let len = 2 * (m + 1);
        buf.clear();
        buf.resize(len, Complex64::default());
        for (n, &v) in x.iter().enumerate() {
            buf[n + 1] = Complex64::new(v, 0.0);
            buf[len - 1 - n] = Complex64::new(-v, 0.0);
        }
        self.fft.process(buf);
        for (k, v) in x.iter_mut().enumerate() {
            *v = -0.5 * buf[k + 1].im;
        }
    }
}

/// Dirichlet eigenvalues `(4/h^2) sin^2(pi m / (2(M + 1)))` of the 1D second difference.
fn eigenvalues_1d(m: usize, h: f64) -> Vec<f64> {
    (1..=m)
        .map(|k| {
            let s = (std::f64::consts::PI * k as f64 / (2.0 * (m + 1) as f64)).sin();
            4.0 * s * s / (h * h)
        })
        .collect()
}

/// Applies `f(lambda_mn)` in the sine eigenbasis of the support sub-grid.
fn spectral_apply(q: &ScattererField, f: impl Fn(f64) -> f64) -> ScattererField {
    let grid = q.grid;
    let (xl, xh) = grid.support_range_x();
    let (yl, yh) = grid.support_range_y();
    let (mx, my) = (xh - xl, yh - yl);
    let mut out = ScattererField::zeros(grid);
    if mx == 0 || my == 0 {
        return out;
    }
    let mut planner = FftPlanner::new();
    let tx = Dst1::new(mx, &mut planner);
    let ty = Dst1::new(my, &mut planner);
    let mut buf = Vec::new();
    // block[j][i], rows along x
    let mut block: Vec<Vec<f64>> = (yl..yh)
        .map(|j| (xl..xh).map(|i| q.values[grid.index(i, j)]).collect())
        .collect();
    let transform = |block: &mut Vec<Vec<f64>>, buf: &mut Vec<Complex64>| {
        for row in block.iter_mut() {
            tx.apply(row, buf);
        }
        let mut col = vec![0.0; my];
        for i in 0..mx {
            for (c, row) in col.iter_mut().zip(block.iter()) {
                *c = row[i];
            }
            ty.apply(&mut col, buf);
            for (c, row) in col.iter().zip(block.iter_mut()) {
                row[i] = *c;
            }
        }
    };
    transform(&mut block, &mut buf);
    let lx = eigenvalues_1d(mx, grid.hx());
    let ly = eigenvalues_1d(my, grid.hy());
    let norm = 4.0 / ((mx + 1) as f64 * (my + 1) as f64);
    for (row, ly) in block.iter_mut().zip(&ly) {
        for (v, lx) in row.iter_mut().zip(&lx) {
            *v *= norm * f(lx + ly);
        }
    }
    transform(&mut block, &mut buf);
    for (row, j) in block.iter().zip(yl..yh) {
        for (v, i) in row.iter().zip(xl..xh) {
            out.values[grid.index(i, j)] = *v;
        }
    }
    out
}

/// `A^power q` with `A = a_scale (-Laplacian_h)`, Dirichlet on `Omega`.
pub fn apply_a_pow(q: &ScattererField, power: f64, cfg: &RegularizerConfig) -> ScattererField {
    if power == 0.0 {
        let mut r = q.clone();
        r.apply_support();
        return r;
    }
    let a = cfg.a_scale;
    spectral_apply(q, |l| (a * l).powf(power))
}

/// Gradient `A^s q` of `(1/2) ||A^{s/2} q||^2`.
pub fn grad_r_gaussian(q: &ScattererField, cfg: &RegularizerConfig) -> ScattererField {
    apply_a_pow(q, cfg.s, cfg)
}

/// Node block `[lo - 1, hi]` along each axis: the support plus its zero ring.
fn tv_block(grid: &GridSpec) -> ((usize, usize), (usize, usize)) {
    let (xl, xh) = grid.support_range_x();
    let (yl, yh) = grid.support_range_y();
    (
        (xl.saturating_sub(1), xh.min(grid.nx - 1)),
        (yl.saturating_sub(1), yh.min(grid.ny - 1)),
    )
}

/// Forward differences in the TV block; zero flux across its far edges.
fn forward_diff(q: &ScattererField, i: usize, j: usize, xr: (usize, usize), yr: (usize, usize)) -> (f64, f64) {
    let g = q.grid;
    let v = q.values[g.index(i, j)];
    let dx = if i < xr.1 {
        (q.values[g.index(i + 1, j)] - v) / g.hx()
    } else {
        0.0
    };
    let dy = if j < yr.1 {
        (q.values[g.index(i, j + 1)] - v) / g.hy()
    } else {
        0.0
    };
    (dx, dy)
}

/// `lambda hx hy sum sqrt(|D q|^2 + delta)` over the TV block.
pub fn tv_energy(q: &ScattererField, cfg: &RegularizerConfig) -> f64 {
    if cfg.lambda == 0.0 {
        return 0.0;
    }
    let (xr, yr) = tv_block(&q.grid);
    let mut e = 0.0;
    for j in yr.0..=yr.1 {
        for i in xr.0..=xr.1 {
            let (dx, dy) = forward_diff(q, i, j, xr, yr);
            e += (dx * dx + dy * dy + cfg.delta_tv).sqrt();
        }
    }
    cfg.lambda * q.grid.cell_area() * e
}

/// Gradient of [`tv_energy`] in the `hx hy` inner product: `lambda D^T (D q / sqrt(|D q|^2 + delta))`,
/// i.e. minus the discrete divergence of the normalized gradient.
pub fn grad_r_tv(q: &ScattererField, cfg: &RegularizerConfig) -> ScattererField {
    let grid = q.grid;
    let mut g = ScattererField::zeros(grid);
    if cfg.lambda == 0.0 {
        return g;
    }
    let (xr, yr) = tv_block(&grid);
    let (hx, hy) = (grid.hx(), grid.hy());
    for j in yr.0..=yr.1 {
        for i in xr.0..=xr.1 {
            let (dx, dy) = forward_diff(q, i, j, xr, yr);
            let r = (dx * dx + dy * dy + cfg.delta_tv).sqrt();
            let (wx, wy) = (cfg.lambda * dx / r, cfg.lambda * dy / r);
            let n = grid.index(i, j);
            if i < xr.1 {
                g.values[n] -= wx / hx;
                g.values[grid.index(i + 1, j)] += wx / hx;
            }
            if j < yr.1 {
                g.values[n] -= wy / hy;
                g.values[grid.index(i, j + 1)] += wy / hy;
            }
        }
    }
    g.apply_support();
    g
}

/// Full prior gradient `A^s q + grad TV`, before the `weight` multiplier.
pub fn grad_r(q: &ScattererField, cfg: &RegularizerConfig) -> ScattererField {
    let g = grad_r_gaussian(q, cfg);
    if cfg.lambda == 0.0 {
        g
    } else {
        g.axpy(1.0, &grad_r_tv(q, cfg))
    }
}

/// `(1/2) <q, A^s q> + TV(q)`.
pub fn r_value(q: &ScattererField, cfg: &RegularizerConfig) -> f64 {
    0.5 * q.dot(&grad_r_gaussian(q, cfg)) + tv_energy(q, cfg)
}
