//! Computational geometry: the physical region, the PML-extended rectangle,
//! the uniform node grid, PML stretching profiles and receiver placement.
//!
//! Node `(i, j)` sits at `(x_min + i*hx, y_min + j*hy)` and is stored at
//! `j*nx + i` (one grid row per `y` level).

use std::ops::{Add, Mul};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative tolerance used when snapping coordinates onto grid lines.
const SNAP: f64 = 1e-10;

/// Axis-aligned rectangle `[x_min, x_max] x [y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub const fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    /// The square `[-half, half]^2`.
    pub const fn square(half: f64) -> Self {
        Self::new(-half, half, -half, half)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn expand(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x_min - dx, self.x_max + dx, self.y_min - dy, self.y_max + dy)
    }
}

/// PML absorption profile `sigma(t) = sigma0 * (t / d)^p` inside a layer of thickness `d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PmlProfile {
    pub sigma0: f64,
    pub p: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Default for PmlProfile {
    fn default() -> Self {
        Self {
            sigma0: 1.5,
            p: 2.5,
            d1: 0.15,
            d2: 0.15,
        }
    }
}

impl PmlProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 1.0) {
            return Err(Error::param("pml.sigma0", format!("must be > 1, got {}", self.sigma0)));
        }
        if !(self.p >= 2.0) {
            return Err(Error::param("pml.p", format!("must be >= 2, got {}", self.p)));
        }
        if !(self.d1 > 0.0) {
            return Err(Error::param("pml.d1", format!("must be > 0, got {}", self.d1)));
        }
        if !(self.d2 > 0.0) {
            return Err(Error::param("pml.d2", format!("must be > 0, got {}", self.d2)));
        }
        Ok(())
    }
}

/// Absorption coefficient at `coord` for a layer attached to the interval `[lo, hi]`.
pub fn pml_sigma(coord: f64, lo: f64, hi: f64, thickness: f64, profile: &PmlProfile) -> Result<f64> {
    if !(thickness > 0.0) || !(lo < hi) {
        return Err(Error::param("pml", "need thickness > 0 and lo < hi"));
    }
    let slack = SNAP * thickness;
    if coord < lo - thickness - slack || coord > hi + thickness + slack || coord.is_nan() {
        return Err(Error::OutOfDomain {
            x: coord,
            y: f64::NAN,
            what: "of the PML profile",
        });
    }
    let depth = if coord > hi {
        (coord - hi).min(thickness)
    } else if coord < lo {
        (lo - coord).min(thickness)
    } else {
        return Ok(0.0);
    };
    Ok(profile.sigma0 * (depth / thickness).powf(profile.p))
}

/// Uniform tensor-product grid covering the PML-extended domain `D`, together
/// with the physical region `Omega` that carries the scatterer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub domain: Rect,
    pub omega: Rect,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, domain: Rect, omega: Rect) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::Geometry(format!("need at least 3x3 nodes, got {nx}x{ny}")));
        }
        if !(domain.x_max > domain.x_min && domain.y_max > domain.y_min) {
            return Err(Error::Geometry("empty domain rectangle".into()));
        }
        if !(omega.x_min > domain.x_min
            && omega.x_max < domain.x_max
            && omega.y_min > domain.y_min
            && omega.y_max < domain.y_max
            && omega.x_min < omega.x_max
            && omega.y_min < omega.y_max)
        {
            return Err(Error::Geometry(format!(
                "omega {omega:?} is not strictly inside the domain {domain:?}"
            )));
        }
        Ok(Self { nx, ny, domain, omega })
    }

    /// `n x n` grid whose domain is `omega` padded by the PML layers.
    pub fn with_pml(n: usize, omega: Rect, pml: &PmlProfile) -> Result<Self> {
        pml.validate()?;
        Self::new(n, n, omega.expand(pml.d1, pml.d2), omega)
    }

    pub fn hx(&self) -> f64 {
        (self.domain.x_max - self.domain.x_min) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.domain.y_max - self.domain.y_min) / (self.ny - 1) as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, i: usize) -> f64 {
        self.domain.x_min + i as f64 * self.hx()
    }

    pub fn y(&self, j: usize) -> f64 {
        self.domain.y_min + j as f64 * self.hy()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    /// Index range `lo..hi` of nodes strictly inside `(a, b)` along one axis.
    fn open_range(start: f64, h: f64, n: usize, a: f64, b: f64) -> (usize, usize) {
        let lo = ((a - start) / h + SNAP).floor() as isize + 1;
        let hi = ((b - start) / h - SNAP).ceil() as isize;
        let lo = lo.clamp(0, n as isize) as usize;
        let hi = hi.clamp(0, n as isize) as usize;
        (lo, hi.max(lo))
    }

    /// Node index range along `x` strictly inside `Omega`.
    pub fn support_range_x(&self) -> (usize, usize) {
        Self::open_range(
            self.domain.x_min,
            self.hx(),
            self.nx,
            self.omega.x_min,
            self.omega.x_max,
        )
    }

    /// Node index range along `y` strictly inside `Omega`.
    pub fn support_range_y(&self) -> (usize, usize) {
        Self::open_range(
            self.domain.y_min,
            self.hy(),
            self.ny,
            self.omega.y_min,
            self.omega.y_max,
        )
    }

    /// True when node `(i, j)` lies strictly inside `Omega`; only these nodes carry `q`.
    pub fn in_support(&self, i: usize, j: usize) -> bool {
        let (xl, xh) = self.support_range_x();
        let (yl, yh) = self.support_range_y();
        (xl..xh).contains(&i) && (yl..yh).contains(&j)
    }

    /// Rectangle outside of which the PML layers start.
    pub fn pml_interior(&self, pml: &PmlProfile) -> Rect {
        Rect::new(
            self.domain.x_min + pml.d1,
            self.domain.x_max - pml.d1,
            self.domain.y_min + pml.d2,
            self.domain.y_max - pml.d2,
        )
    }

    /// Checks that `Omega` sits inside the non-PML part of the domain.
    pub fn check_pml(&self, pml: &PmlProfile) -> Result<()> {
        pml.validate()?;
        let inner = self.pml_interior(pml);
        let tol = SNAP * (self.hx() + self.hy());
        if self.omega.x_min < inner.x_min - tol
            || self.omega.x_max > inner.x_max + tol
            || self.omega.y_min < inner.y_min - tol
            || self.omega.y_max > inner.y_max + tol
        {
            return Err(Error::Geometry(format!(
                "omega {:?} overlaps the PML layers (interior {:?})",
                self.omega, inner
            )));
        }
        Ok(())
    }

    pub fn same_bounds(&self, other: &GridSpec) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        close(self.domain.x_min, other.domain.x_min)
            && close(self.domain.x_max, other.domain.x_max)
            && close(self.domain.y_min, other.domain.y_min)
            && close(self.domain.y_max, other.domain.y_max)
    }

    /// Bilinear interpolation stencil for `(x, y)`: four `(node index, weight)` pairs.
    ///
    /// Weights sum to one; a point on a node yields weight one on that node.
    pub fn bilinear_stencil(&self, x: f64, y: f64) -> Result<[(usize, f64); 4]> {
        let (i, tx) = locate(x, self.domain.x_min, self.hx(), self.nx).ok_or(Error::OutOfDomain {
            x,
            y,
            what: "of the grid",
        })?;
        let (j, ty) = locate(y, self.domain.y_min, self.hy(), self.ny).ok_or(Error::OutOfDomain {
            x,
            y,
            what: "of the grid",
        })?;
        Ok([
            (self.index(i, j), (1.0 - tx) * (1.0 - ty)),
            (self.index(i + 1, j), tx * (1.0 - ty)),
            (self.index(i, j + 1), (1.0 - tx) * ty),
            (self.index(i + 1, j + 1), tx * ty),
        ])
    }
}

/// Cell index and local coordinate in `[0, 1)` (or exactly 1 on the last line).
fn locate(coord: f64, start: f64, h: f64, n: usize) -> Option<(usize, f64)> {
    let s = (coord - start) / h;
    let last = (n - 1) as f64;
    if !(s >= -SNAP && s <= last + SNAP) {
        return None;
    }
    let s = s.clamp(0.0, last);
    let mut cell = s.floor();
    let mut t = s - cell;
    if 1.0 - t < SNAP {
        cell += 1.0;
        t = 0.0;
    } else if t < SNAP {
        t = 0.0;
    }
    if cell >= last {
        cell = last - 1.0;
        t = 1.0;
    }
    Some((cell as usize, t))
}

/// Mean of the absorption profile over `[a, b]`, integrated exactly.
pub fn pml_sigma_mean(a: f64, b: f64, lo: f64, hi: f64, thickness: f64, profile: &PmlProfile) -> Result<f64> {
    pml_sigma(a, lo, hi, thickness, profile)?;
    pml_sigma(b, lo, hi, thickness, profile)?;
    if !(a < b) {
        return Err(Error::param("pml", "averaging interval must have a < b"));
    }
    let antiderivative = |c: f64| {
        let scale = profile.sigma0 * thickness / (profile.p + 1.0);
        if c > hi {
            scale * ((c - hi).min(thickness) / thickness).powf(profile.p + 1.0)
        } else if c < lo {
            -scale * ((lo - c).min(thickness) / thickness).powf(profile.p + 1.0)
        } else {
            0.0
        }
    };
    Ok((antiderivative(b) - antiderivative(a)) / (b - a))
}

/// Complex coordinate stretching `(s1, s2) = (1 + i sigma1(x), 1 + i sigma2(y))`.
pub fn stretching(x: f64, y: f64, grid: &GridSpec, profile: &PmlProfile) -> Result<(Complex64, Complex64)> {
    let inner = grid.pml_interior(profile);
    let s1 = pml_sigma(x, inner.x_min, inner.x_max, profile.d1, profile)?;
    let s2 = pml_sigma(y, inner.y_min, inner.y_max, profile.d2, profile)?;
    Ok((Complex64::new(1.0, s1), Complex64::new(1.0, s2)))
}

/// Grid function with values of type `T`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    pub grid: GridSpec,
    pub values: Vec<T>,
}

/// Real scatterer contrast `q`, zero outside `Omega`.
pub type ScattererField = Field<f64>;
/// Complex wave field on the extended domain.
pub type ComplexField = Field<Complex64>;

impl<T> Field<T>
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            values: vec![T::default(); grid.len()],
            grid,
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Geometry(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.nx,
                grid.ny,
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Evaluates `f(x, y)` at every node.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(f64, f64) -> T) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            let y = grid.y(j);
            for i in 0..grid.nx {
                values.push(f(grid.x(i), y));
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.values[self.grid.index(i, j)]
    }

    /// Bilinear interpolation at an arbitrary point of the domain.
    pub fn interpolate(&self, x: f64, y: f64) -> Result<T> {
        let stencil = self.grid.bilinear_stencil(x, y)?;
        Ok(stencil
            .iter()
            .fold(T::default(), |acc, &(n, w)| acc + self.values[n] * w))
    }

    /// Samples this field bilinearly at the nodes of `target`.
    pub fn restrict_to_grid(&self, target: &GridSpec) -> Result<Self> {
        if !self.grid.same_bounds(target) {
            return Err(Error::Geometry(format!(
                "cannot resample between domains {:?} and {:?}",
                self.grid.domain, target.domain
            )));
        }
        let mut values = Vec::with_capacity(target.len());
        for j in 0..target.ny {
            for i in 0..target.nx {
                values.push(self.interpolate(target.x(i), target.y(j))?);
            }
        }
        Ok(Self { grid: *target, values })
    }
}

/// Free-function form of [`Field::interpolate`] for complex fields.
pub fn interpolate(field: &ComplexField, point: (f64, f64)) -> Result<Complex64> {
    field.interpolate(point.0, point.1)
}

impl ScattererField {
    /// Evaluates `f` on the support nodes and leaves every other node at zero.
    pub fn supported_from_fn(grid: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut q = Self::zeros(grid);
        let (xl, xh) = grid.support_range_x();
        let (yl, yh) = grid.support_range_y();
        for j in yl..yh {
            for i in xl..xh {
                q.values[grid.index(i, j)] = f(grid.x(i), grid.y(j));
            }
        }
        q
    }

    /// Zeroes every node outside `Omega`.
    pub fn apply_support(&mut self) {
        let grid = self.grid;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                if !grid.in_support(i, j) {
                    self.values[grid.index(i, j)] = 0.0;
                }
            }
        }
    }

    /// Resamples onto `target` and re-imposes the support constraint there.
    pub fn restrict_supported(&self, target: &GridSpec) -> Result<Self> {
        let mut q = self.restrict_to_grid(target)?;
        q.apply_support();
        Ok(q)
    }

    pub fn clamp(&mut self, lo: f64, hi: f64) {
        for v in &mut self.values {
            *v = v.clamp(lo, hi);
        }
    }

    /// Discrete inner product `hx*hy*sum(a*b)`.
    pub fn dot(&self, other: &ScattererField) -> f64 {
        self.grid.cell_area() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &ScattererField) -> ScattererField {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Field {
            grid: self.grid,
            values,
        }
    }

    pub fn scaled(&self, alpha: f64) -> ScattererField {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }
}

impl ComplexField {
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
    }
}

/// Receiver positions `x_1 .. x_Nd`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverSet {
    pub points: Vec<(f64, f64)>,
}

impl ReceiverSet {
    pub fn count(&self) -> usize {
        self.points.len()
    }

    /// Checks that every receiver lies in the closed non-PML region, where
    /// both stretchings are exactly one.
    pub fn check_inside(&self, grid: &GridSpec, pml: &PmlProfile) -> Result<()> {
        let inner = grid.pml_interior(pml);
        let tol = 1e-12 * (1.0 + inner.x_max.abs().max(inner.y_max.abs()));
        for &(x, y) in &self.points {
            let ok =
                x >= inner.x_min - tol && x <= inner.x_max + tol && y >= inner.y_min - tol && y <= inner.y_max + tol;
            if !ok {
                return Err(Error::Geometry(format!(
                    "receiver ({x}, {y}) lies in the PML (non-PML region {inner:?})"
                )));
            }
        }
        Ok(())
    }

    /// Samples a field at every receiver.
    pub fn sample(&self, field: &ComplexField) -> Result<Vec<Complex64>> {
        self.points.iter().map(|&(x, y)| field.interpolate(x, y)).collect()
    }
}

/// `count` receivers equally spaced on the circle of `radius` about the origin,
/// starting on the positive `x` axis.
pub fn build_receivers(count: usize, radius: f64) -> Result<ReceiverSet> {
    if count == 0 {
        return Err(Error::param("receivers.count", "must be >= 1"));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::param(
            "receivers.radius",
            format!("must be positive, got {radius}"),
        ));
    }
    let points = (0..count)
        .map(|n| {
            let t = std::f64::consts::TAU * n as f64 / count as f64;
            (radius * t.cos(), radius * t.sin())
        })
        .collect();
    Ok(ReceiverSet { points })
}

/// Like [`build_receivers`] but rejects circles that reach into the PML.
pub fn build_receivers_for(count: usize, radius: f64, grid: &GridSpec, pml: &PmlProfile) -> Result<ReceiverSet> {
    let inner = grid.pml_interior(pml);
    let room = inner.x_max.min(-inner.x_min).min(inner.y_max).min(-inner.y_min);
    if radius > room * (1.0 + 1e-12) {
        return Err(Error::Geometry(format!(
            "receiver radius {radius} reaches the PML (largest admissible radius {room})"
        )));
    }
    build_receivers(count, radius)
}
