//! Training scatterers and fine-minus-coarse model-error samples.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gmm::ErrorSampleSet;
use crate::grid::{GridSpec, ReceiverSet, ScattererField};
use crate::helmholtz::{record_seed, HelmholtzSolver};

/// Example 1 base profile before the `(3x, 3y)` scaling.
pub fn example1_profile(x: f64, y: f64) -> f64 {
    0.3 * (1.0 - x).powi(2) * (-x * x - (y + 1.0).powi(2)).exp()
        - (0.2 * x - x.powi(3) - y.powi(5)) * (-x * x - y * y).exp()
        - 0.03 * (-(x + 1.0).powi(2) - y * y).exp()
}

pub fn example1_value(x: f64, y: f64) -> f64 {
    example1_profile(3.0 * x, 3.0 * y)
}

/// Slack used when deciding which side of a square edge a node lies on.
const EDGE_SNAP: f64 = 1e-12;

pub fn example2_value(x: f64, y: f64) -> f64 {
    let inside = |half: f64, closed: bool| {
        if closed {
            x.abs() <= half + EDGE_SNAP && y.abs() <= half + EDGE_SNAP
        } else {
            x.abs() < half - EDGE_SNAP && y.abs() < half - EDGE_SNAP
        }
    };
    if inside(0.1, false) {
        -0.1
    } else if inside(0.3, true) {
        0.7
    } else {
        0.0
    }
}

/// The smooth Example 1 scatterer on the support nodes of `grid`.
pub fn true_scatterer_example1(grid: GridSpec) -> ScattererField {
    ScattererField::supported_from_fn(grid, example1_value)
}

/// The piecewise-constant Example 2 scatterer on the support nodes of `grid`.
pub fn true_scatterer_example2(grid: GridSpec) -> ScattererField {
    ScattererField::supported_from_fn(grid, example2_value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    GaussianBumps,
    RandomSquare,
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_bumps" => Ok(Family::GaussianBumps),
            "random_square" => Ok(Family::RandomSquare),
            other => Err(Error::param(
                "learning.family",
                format!("unknown family `{other}` (expected gaussian_bumps or random_square)"),
            )),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::GaussianBumps => "gaussian_bumps",
            Family::RandomSquare => "random_square",
        })
    }
}

/// Closed interval `[lo, hi]` for a uniform draw.
pub type Range = (f64, f64);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpRanges {
    /// Exponents of `(1 - x^2)` and `(1 - y^2)`.
    pub power: Range,
    pub amplitude: Range,
    /// Inverse squared widths.
    pub width: Range,
    pub center: Range,
}

impl Default for BumpRanges {
    fn default() -> Self {
        Self {
            power: (1.0, 3.0),
            amplitude: (-1.0, 1.0),
            width: (8.0, 10.0),
            center: (-0.8, 0.8),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SquareRanges {
    pub height: Range,
    pub side: Range,
}

impl Default for SquareRanges {
    fn default() -> Self {
        Self {
            height: (-1.0, 1.0),
            side: (0.2, 1.2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExampleSpec {
    pub family: Family,
    pub count: usize,
    pub seed: u64,
    pub bumps: BumpRanges,
    pub square: SquareRanges,
}

impl ExampleSpec {
    pub fn new(family: Family, count: usize, seed: u64) -> Self {
        Self {
            family,
            count,
            seed,
            bumps: BumpRanges::default(),
            square: SquareRanges::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::param("learning.count", "must be >= 1"));
        }
        let ranges = [
            ("bumps.power", self.bumps.power),
            ("bumps.amplitude", self.bumps.amplitude),
            ("bumps.width", self.bumps.width),
            ("bumps.center", self.bumps.center),
            ("square.height", self.square.height),
            ("square.side", self.square.side),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::param(
                    "learning.family",
                    format!("range {name} = [{lo}, {hi}] is empty"),
                ));
            }
        }
        if !(self.square.side.0 > 0.0 && self.square.side.1 <= 2.0) {
            return Err(Error::param("learning.family", "square side must lie in (0, 2]"));
        }
        Ok(())
    }
}

/// Parameters of one drawn training scatterer.
#[derive(Clone, Debug, PartialEq)]
pub enum ExampleParams {
    /// Three rows `(a1, ..., a7)`.
    Bumps([[f64; 7]; 3]),
    Square {
        cx: f64,
        cy: f64,
        side: f64,
        height: f64,
    },
}

impl ExampleParams {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        match self {
            ExampleParams::Bumps(rows) => {
                let (bx, by) = ((1.0 - x * x).max(0.0), (1.0 - y * y).max(0.0));
                rows.iter()
                    .map(|a| {
                        bx.powf(a[0])
                            * by.powf(a[1])
                            * a[2]
                            * (-a[3] * (x - a[4]).powi(2) - a[5] * (y - a[6]).powi(2)).exp()
                    })
                    .sum()
            }
            ExampleParams::Square { cx, cy, side, height } => {
                let h = 0.5 * side;
                if (x - cx).abs() <= h && (y - cy).abs() <= h {
                    *height
                } else {
                    0.0
                }
            }
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): Range) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Parameters of example `index`; a pure function of `(spec, index)`.
pub fn example_params(spec: &ExampleSpec, index: usize) -> Result<ExampleParams> {
    if index >= spec.count {
        return Err(Error::param(
            "index",
            format!("{index} >= example count {}", spec.count),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(record_seed(spec.seed, usize::MAX >> 32, index));
    Ok(match spec.family {
        Family::GaussianBumps => {
            let b = &spec.bumps;
            let mut rows = [[0.0; 7]; 3];
            for a in &mut rows {
                *a = [
                    draw(&mut rng, b.power),
                    draw(&mut rng, b.power),
                    draw(&mut rng, b.amplitude),
                    draw(&mut rng, b.width),
                    draw(&mut rng, b.center),
                    draw(&mut rng, b.width),
                    draw(&mut rng, b.center),
                ];
            }
            ExampleParams::Bumps(rows)
        }
        Family::RandomSquare => {
            let s = &spec.square;
            let side = draw(&mut rng, s.side);
            let room = 1.0 - 0.5 * side;
            ExampleParams::Square {
                cx: draw(&mut rng, (-room, room)),
                cy: draw(&mut rng, (-room, room)),
                side,
                height: draw(&mut rng, s.height),
            }
        }
    })
}

/// Example `index` evaluated on the support nodes of `grid`.
pub fn gen_example(spec: &ExampleSpec, index: usize, grid: GridSpec) -> Result<ScattererField> {
    let p = example_params(spec, index)?;
    Ok(ScattererField::supported_from_fn(grid, |x, y| p.value(x, y)))
}

/// A training sample whose solve failed; it is left out of the sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleFailure {
    pub index: usize,
    pub message: String,
}

/// Error samples for every angle in `angles` at one wavenumber.
///
/// Each training field is sampled on both grids from its definition, and one
/// factorization per grid serves all angles.
pub fn error_samples_for_angles(
    spec: &ExampleSpec,
    kappa: f64,
    angles: &[f64],
    fine: &HelmholtzSolver,
    coarse: &HelmholtzSolver,
    receivers: &ReceiverSet,
) -> Result<(Vec<ErrorSampleSet>, Vec<SampleFailure>)> {
    spec.validate()?;
    receivers.check_inside(&fine.grid, &fine.pml)?;
    receivers.check_inside(&coarse.grid, &coarse.pml)?;
    let mut sets: Vec<Vec<Vec<Complex64>>> = vec![Vec::with_capacity(spec.count); angles.len()];
    let mut failures = Vec::new();
    for n in 0..spec.count {
        let params = example_params(spec, n)?;
        let qf = ScattererField::supported_from_fn(fine.grid, |x, y| params.value(x, y));
        let qc = ScattererField::supported_from_fn(coarse.grid, |x, y| params.value(x, y));
        let attempt = || -> Result<Vec<Vec<Complex64>>> {
            let of = fine.factorize(&qf, kappa)?;
            let oc = coarse.factorize(&qc, kappa)?;
            angles
                .iter()
                .map(|&a| {
                    let (df, _) = of.forward_data(a, receivers)?;
                    let (dc, _) = oc.forward_data(a, receivers)?;
                    Ok(df.iter().zip(&dc).map(|(f, c)| f - c).collect())
                })
                .collect()
        };
        match attempt() {
            Ok(per_angle) => {
                for (set, e) in sets.iter_mut().zip(per_angle) {
                    set.push(e);
                }
            }
            Err(e @ Error::Solver { .. }) => failures.push(SampleFailure {
                index: n,
                message: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    let sets = sets
        .into_iter()
        .zip(angles)
        .map(|(samples, &a)| ErrorSampleSet::new(kappa, Some(a), samples))
        .collect::<Result<_>>()?;
    Ok((sets, failures))
}

/// Error samples `F(q_n) - F_a(q_n)` at one `(kappa, angle)`.
pub fn compute_error_samples(
    spec: &ExampleSpec,
    kappa: f64,
    angle: f64,
    fine: &HelmholtzSolver,
    coarse: &HelmholtzSolver,
    receivers: &ReceiverSet,
) -> Result<(ErrorSampleSet, Vec<SampleFailure>)> {
    let (mut sets, failures) = error_samples_for_angles(spec, kappa, &[angle], fine, coarse, receivers)?;
    Ok((sets.remove(0), failures))
}

/// Concatenates per-angle sets of one wavenumber into a single pooled set.
pub fn pool(sets: &[ErrorSampleSet]) -> Result<ErrorSampleSet> {
    let kappa = sets.first().map_or(0.0, |s| s.kappa);
    if sets.iter().any(|s| s.kappa != kappa) {
        return Err(Error::Geometry(
            "cannot pool sample sets of different wavenumbers".into(),
        ));
    }
    ErrorSampleSet::new(
        kappa,
        None,
        sets.iter().flat_map(|s| s.samples.iter().cloned()).collect(),
    )
}
