//! Analytical arithmetic and memory cost of one delayed update, per filter
//! step, for `n` states and `m` measurements, plus measured counts from the
//! instrumented implementations.
//!
//! Coefficients are exact rationals; the published two-decimal values are
//! roundings of thirds and sixths (0.33 = 1/3, 0.83 = 5/6, 6.67 = 20/3, ...).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use thiserror::Error;

use crate::dskf::dskf_update;
use crate::error::Result;
use crate::matcore::{Matrix, OpCounter};
use crate::models::{Belief, DelayedMeasurement, EpochTransition};
use crate::runio::{random_matrix, random_spd, random_transition, RandomStream};
use crate::scfilter::{sc_clone, sc_predict_over, sc_update, sc_update_reduced};

pub type Rational = Ratio<i128>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    StochasticCloning,
    DelayedState,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::StochasticCloning, Method::DelayedState];

    pub fn label(self) -> &'static str {
        match self {
            Method::StochasticCloning => "sc",
            Method::DelayedState => "dskf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Flops,
    Memory,
}

impl std::str::FromStr for Metric {
    type Err = ComplexityError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "flops" => Ok(Metric::Flops),
            "memory" => Ok(Metric::Memory),
            other => Err(ComplexityError::UnknownMetric(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComplexityError {
    #[error("dimensions must be positive (n = {n}, m = {m})")]
    NonPositive { n: i64, m: i64 },
    #[error("unknown metric {0:?} (expected \"flops\" or \"memory\")")]
    UnknownMetric(String),
}

/// `coef · n^n_pow · m^m_pow`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Term {
    pub coef: Rational,
    pub n_pow: u32,
    pub m_pow: u32,
}

/// A polynomial in `(n, m)` that keeps its terms in tabulated order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Polynomial {
    terms: Vec<Term>,
}

fn t(num: i128, den: i128, n_pow: u32, m_pow: u32) -> Term {
    Term {
        coef: Rational::new(num, den),
        n_pow,
        m_pow,
    }
}

impl Polynomial {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Exact value at `(n, m)`, summed over a common denominator.
    pub fn eval(&self, n: i64, m: i64) -> Rational {
        let denom = self
            .terms
            .iter()
            .fold(1i128, |acc, term| lcm(acc, *term.coef.denom()));
        let numer: i128 = self
            .terms
            .iter()
            .map(|term| {
                term.coef.numer()
                    * (denom / term.coef.denom())
                    * (n as i128).pow(term.n_pow)
                    * (m as i128).pow(term.m_pow)
            })
            .sum();
        Rational::new(numer, denom)
    }

    /// Coefficients keyed by `(n_pow, m_pow)`, like terms merged, zeros dropped.
    pub fn coefficients(&self) -> BTreeMap<(u32, u32), Rational> {
        let mut out = BTreeMap::new();
        for term in &self.terms {
            *out.entry((term.n_pow, term.m_pow))
                .or_insert_with(|| Rational::from_integer(0)) += term.coef;
        }
        out.retain(|_, c| *c != Rational::from_integer(0));
        out
    }

    pub fn sum<'a>(parts: impl IntoIterator<Item = &'a Polynomial>) -> Polynomial {
        Polynomial {
            terms: parts
                .into_iter()
                .flat_map(|p| p.terms.iter().copied())
                .collect(),
        }
    }

    /// Renders the polynomial with coefficients rounded to two decimals and
    /// trailing zeros dropped, e.g. `0.33m^3 + 4mn^2 + m^2 - 0.33m`.
    pub fn to_table_string(&self) -> String {
        let mut out = String::new();
        for (idx, term) in self.terms.iter().enumerate() {
            let negative = term.coef < Rational::from_integer(0);
            match (idx, negative) {
                (0, false) => {}
                (0, true) => out.push('-'),
                (_, false) => out.push_str(" + "),
                (_, true) => out.push_str(" - "),
            }
            let magnitude = if negative { -term.coef } else { term.coef };
            let constant = term.n_pow == 0 && term.m_pow == 0;
            if magnitude != Rational::from_integer(1) || constant {
                out.push_str(&two_decimals(magnitude));
            }
            for (symbol, pow) in [('m', term.m_pow), ('n', term.n_pow)] {
                match pow {
                    0 => {}
                    1 => out.push(symbol),
                    p => {
                        let _ = write!(out, "{symbol}^{p}");
                    }
                }
            }
        }
        out
    }
}

fn lcm(a: i128, b: i128) -> i128 {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    a / x * b
}

fn two_decimals(value: Rational) -> String {
    let hundredths = (value * Rational::from_integer(100)).round().to_integer();
    let (whole, frac) = (hundredths / 100, hundredths % 100);
    match frac {
        0 => format!("{whole}"),
        f if f % 10 == 0 => format!("{whole}.{}", f / 10),
        f => format!("{whole}.{f:02}"),
    }
}

/// Symbolic arithmetic-cost rows for one method.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsTable {
    pub gain_mults: Polynomial,
    pub state_mults: Polynomial,
    pub cov_mults: Polynomial,
    pub gain_adds: Polynomial,
    pub state_adds: Polynomial,
    pub cov_adds: Polynomial,
    pub total: Polynomial,
}

impl FlopsTable {
    pub fn components(&self) -> [&Polynomial; 6] {
        [
            &self.gain_mults,
            &self.state_mults,
            &self.cov_mults,
            &self.gain_adds,
            &self.state_adds,
            &self.cov_adds,
        ]
    }
}

/// Symbolic memory rows (floating-point values stored) for one method.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryTable {
    pub gain: Polynomial,
    pub state: Polynomial,
    pub cov: Polynomial,
    pub total: Polynomial,
}

impl MemoryTable {
    pub fn components(&self) -> [&Polynomial; 3] {
        [&self.gain, &self.state, &self.cov]
    }
}

// Term exponents are (n_pow, m_pow).
pub fn flops_table(method: Method) -> FlopsTable {
    let p = Polynomial::new;
    match method {
        Method::StochasticCloning => FlopsTable {
            gain_mults: p(vec![
                t(1, 3, 0, 3),
                t(4, 1, 2, 1),
                t(4, 1, 1, 2),
                t(1, 1, 0, 2),
                t(-1, 3, 0, 1),
            ]),
            state_mults: p(vec![t(4, 1, 1, 1)]),
            cov_mults: p(vec![t(16, 1, 3, 0), t(8, 1, 2, 1), t(2, 1, 1, 2)]),
            gain_adds: p(vec![
                t(1, 3, 0, 3),
                t(4, 1, 2, 1),
                t(4, 1, 1, 2),
                t(1, 2, 0, 2),
                t(-4, 1, 1, 1),
                t(-5, 6, 0, 1),
            ]),
            state_adds: p(vec![t(4, 1, 1, 1)]),
            cov_adds: p(vec![
                t(16, 1, 3, 0),
                t(8, 1, 2, 1),
                t(2, 1, 1, 2),
                t(-12, 1, 2, 0),
                t(-2, 1, 1, 1),
                t(2, 1, 1, 0),
            ]),
            total: p(vec![
                t(32, 1, 3, 0),
                t(2, 3, 0, 3),
                t(24, 1, 2, 1),
                t(12, 1, 1, 2),
                t(-12, 1, 2, 0),
                t(3, 2, 0, 2),
                t(2, 1, 1, 1),
                t(2, 1, 1, 0),
                t(-7, 6, 0, 1),
            ]),
        },
        Method::DelayedState => FlopsTable {
            gain_mults: p(vec![
                t(1, 3, 3, 0),
                t(1, 3, 0, 3),
                t(3, 1, 2, 1),
                t(4, 1, 1, 2),
                t(1, 1, 2, 0),
                t(1, 1, 0, 2),
                t(-1, 3, 0, 1),
                t(-1, 3, 1, 0),
            ]),
            state_mults: p(vec![t(2, 1, 1, 1)]),
            cov_mults: p(vec![t(3, 1, 3, 0), t(3, 1, 2, 1), t(1, 1, 1, 2)]),
            gain_adds: p(vec![
                t(1, 3, 3, 0),
                t(1, 3, 0, 3),
                t(3, 1, 2, 1),
                t(4, 1, 1, 2),
                t(1, 2, 2, 0),
                t(3, 2, 0, 2),
                t(-2, 1, 1, 1),
                t(-5, 6, 0, 1),
                t(-5, 6, 1, 0),
            ]),
            state_adds: p(vec![t(2, 1, 1, 1)]),
            cov_adds: p(vec![
                t(3, 1, 3, 0),
                t(3, 1, 2, 1),
                t(1, 1, 1, 2),
                t(-3, 1, 2, 0),
                t(-1, 1, 1, 1),
                t(1, 1, 1, 0),
            ]),
            total: p(vec![
                t(20, 3, 3, 0),
                t(2, 3, 0, 3),
                t(12, 1, 2, 1),
                t(10, 1, 1, 2),
                t(-3, 2, 2, 0),
                t(5, 2, 0, 2),
                t(1, 1, 1, 1),
                t(-7, 6, 0, 1),
                t(-1, 6, 1, 0),
            ]),
        },
    }
}

pub fn memory_table(method: Method) -> MemoryTable {
    let p = Polynomial::new;
    match method {
        Method::StochasticCloning => MemoryTable {
            gain: p(vec![t(5, 1, 0, 2), t(8, 1, 1, 1), t(1, 1, 0, 1)]),
            state: p(vec![t(6, 1, 1, 0), t(3, 1, 0, 1)]),
            cov: p(vec![t(20, 1, 2, 0), t(2, 1, 1, 1), t(1, 1, 0, 0)]),
            total: p(vec![
                t(20, 1, 2, 0),
                t(5, 1, 0, 2),
                t(10, 1, 1, 1),
                t(6, 1, 1, 0),
                t(4, 1, 0, 1),
                t(1, 1, 0, 0),
            ]),
        },
        Method::DelayedState => MemoryTable {
            gain: p(vec![
                t(6, 1, 2, 0),
                t(9, 1, 0, 2),
                t(8, 1, 1, 1),
                t(1, 1, 1, 0),
                t(1, 1, 0, 1),
            ]),
            state: p(vec![t(2, 1, 1, 0), t(4, 1, 0, 1)]),
            cov: p(vec![t(9, 1, 2, 0), t(1, 1, 1, 1), t(1, 1, 0, 0)]),
            total: p(vec![
                t(15, 1, 2, 0),
                t(9, 1, 0, 2),
                t(9, 1, 1, 1),
                t(3, 1, 1, 0),
                t(5, 1, 0, 1),
                t(1, 1, 0, 0),
            ]),
        },
    }
}

/// Arithmetic cost of one delayed update, evaluated at `(n, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostBreakdown {
    pub gain_mults: Rational,
    pub gain_adds: Rational,
    pub state_mults: Rational,
    pub state_adds: Rational,
    pub cov_mults: Rational,
    pub cov_adds: Rational,
    pub total_flops: Rational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryModel {
    pub gain_floats: Rational,
    pub state_floats: Rational,
    pub cov_floats: Rational,
    pub total_floats: Rational,
}

fn check_dims(n: i64, m: i64) -> std::result::Result<(), ComplexityError> {
    if n >= 1 && m >= 1 {
        Ok(())
    } else {
        Err(ComplexityError::NonPositive { n, m })
    }
}

pub fn flops_model(
    method: Method,
    n: i64,
    m: i64,
) -> std::result::Result<CostBreakdown, ComplexityError> {
    check_dims(n, m)?;
    let table = flops_table(method);
    let gain_mults = table.gain_mults.eval(n, m);
    let gain_adds = table.gain_adds.eval(n, m);
    let state_mults = table.state_mults.eval(n, m);
    let state_adds = table.state_adds.eval(n, m);
    let cov_mults = table.cov_mults.eval(n, m);
    let cov_adds = table.cov_adds.eval(n, m);
    Ok(CostBreakdown {
        gain_mults,
        gain_adds,
        state_mults,
        state_adds,
        cov_mults,
        cov_adds,
        total_flops: gain_mults + gain_adds + state_mults + state_adds + cov_mults + cov_adds,
    })
}

pub fn memory_model(
    method: Method,
    n: i64,
    m: i64,
) -> std::result::Result<MemoryModel, ComplexityError> {
    check_dims(n, m)?;
    let table = memory_table(method);
    let gain_floats = table.gain.eval(n, m);
    let state_floats = table.state.eval(n, m);
    let cov_floats = table.cov.eval(n, m);
    Ok(MemoryModel {
        gain_floats,
        state_floats,
        cov_floats,
        total_floats: gain_floats + state_floats + cov_floats,
    })
}

fn totals(
    metric: Metric,
    n: i64,
    m: i64,
) -> std::result::Result<(Rational, Rational), ComplexityError> {
    Ok(match metric {
        Metric::Flops => (
            flops_model(Method::StochasticCloning, n, m)?.total_flops,
            flops_model(Method::DelayedState, n, m)?.total_flops,
        ),
        Metric::Memory => (
            memory_model(Method::StochasticCloning, n, m)?.total_floats,
            memory_model(Method::DelayedState, n, m)?.total_floats,
        ),
    })
}

/// Percent reduction of the delayed-state filter relative to cloning,
/// `100 (SC − DSKF) / SC`.
pub fn percent_reduction(
    metric: Metric,
    n: i64,
    m: i64,
) -> std::result::Result<f64, ComplexityError> {
    let (sc, dskf) = totals(metric, n, m)?;
    let ratio = (sc - dskf) / sc * Rational::from_integer(100);
    Ok(*ratio.numer() as f64 / *ratio.denom() as f64)
}

/// Entry `(n-1, m-1)` holds [`percent_reduction`] at `(n, m)`.
pub fn reduction_grid(
    metric: Metric,
    n_max: usize,
    m_max: usize,
) -> std::result::Result<Matrix, ComplexityError> {
    check_dims(n_max as i64, m_max as i64)?;
    let total = |method| match metric {
        Metric::Flops => Polynomial::sum(flops_table(method).components()),
        Metric::Memory => Polynomial::sum(memory_table(method).components()),
    };
    let (sc, dskf) = (
        total(Method::StochasticCloning),
        total(Method::DelayedState),
    );
    let mut grid = Matrix::zeros(n_max, m_max);
    for n in 1..=n_max as i64 {
        for m in 1..=m_max as i64 {
            let (a, b) = (sc.eval(n, m), dskf.eval(n, m));
            let pct = (a - b) / a * Rational::from_integer(100);
            grid.set(
                n as usize - 1,
                m as usize - 1,
                *pct.numer() as f64 / *pct.denom() as f64,
            );
        }
    }
    Ok(grid)
}

/// Instrumented operation counts for one delayed update of each method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasuredComparison {
    pub n: usize,
    pub m: usize,
    pub sc_full: OpCounter,
    pub sc_reduced: OpCounter,
    pub dskf: OpCounter,
    /// Every trial produced the same counts.
    pub deterministic: bool,
}

impl MeasuredComparison {
    /// Sign of `SC(full) − DSKF` in multiplications.
    pub fn mult_sign(&self) -> std::cmp::Ordering {
        self.sc_full
            .multiplications()
            .cmp(&self.dskf.multiplications())
    }
}

/// Runs `trials` random delayed updates of size `(n, m)` through the
/// instrumented filters. The delayed-state count includes forming `Φ_jk`
/// and the correlation terms.
pub fn measured_comparison(
    n: usize,
    m: usize,
    trials: usize,
    rng: &mut RandomStream,
) -> Result<MeasuredComparison> {
    check_dims(n as i64, m as i64)
        .map_err(|e| crate::error::Error::InvalidProblem(e.to_string()))?;
    let mut first: Option<(OpCounter, OpCounter, OpCounter)> = None;
    let mut deterministic = true;
    for _ in 0..trials.max(1) {
        let prior = Belief::new(rng.standard_normals(n), random_spd(rng, n))?;
        let trans = EpochTransition::from_parts(
            random_transition(rng, n),
            rng.standard_normals(n),
            random_spd(rng, n),
        )?;
        let meas = DelayedMeasurement::new(
            random_matrix(rng, m, n),
            random_matrix(rng, m, n),
            random_spd(rng, m),
            rng.standard_normals(m),
        )?;
        let aug = sc_predict_over(&sc_clone(&prior), &trans)?;
        let pred = aug.current();

        let mut full = OpCounter::new();
        sc_update(&aug, &meas, &mut full)?;
        let mut reduced = OpCounter::new();
        sc_update_reduced(&aug, &meas, &mut reduced)?;
        let mut dskf = OpCounter::new();
        dskf_update(&pred, &trans, &meas, &mut dskf)?;

        let counts = (full, reduced, dskf);
        match first {
            None => first = Some(counts),
            Some(prev) => deterministic &= prev == counts,
        }
    }
    let (sc_full, sc_reduced, dskf) = first.expect("at least one trial");
    Ok(MeasuredComparison {
        n,
        m,
        sc_full,
        sc_reduced,
        dskf,
        deterministic,
    })
}
