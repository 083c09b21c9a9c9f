//! Closed-form communication cost of fixed-depth (FedT) and progressively
//! grown (FedDT) federated training, in weight units (parameter counts).
//!
//! The FedDT schedule runs `c` stages of `T / c` rounds; stage `n` (for
//! `n = 0 … c−1`) exchanges `(N / c)(n + 1)` blocks per stack. An upper stage
//! index of `c − c/N` also circulates; it is non-integral for most `N`, so the
//! `c` stages above are used instead.
//!
//! Two FedDT totals are reported:
//! * [`feddt_total_series`] sums the stage costs directly, giving
//!   `T·N·(W1+W2)·(c+1)/(2c)`. The simulator's ledger matches this exactly.
//! * [`feddt_total_closed_form`] evaluates `(T/2c)(N+1)(W1+W2)` for
//!   comparison. It is smaller than the stage sum by a factor of
//!   `c·N(c+1) / (c(N+1))` in general.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// Inputs to the cost formulas. `layers` is the target depth `N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CostInputs {
    pub rounds: u64,
    pub parts: u64,
    pub layers: u64,
    pub w1: u64,
    pub w2: u64,
}

impl CostInputs {
    pub fn new(rounds: u64, parts: u64, layers: u64, w1: u64, w2: u64) -> Result<Self> {
        let inputs = Self {
            rounds,
            parts,
            layers,
            w1,
            w2,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("T", self.rounds),
            ("c", self.parts),
            ("N", self.layers),
            ("W1", self.w1),
            ("W2", self.w2),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.layers.is_multiple_of(self.parts) {
            return Err(Error::Config(format!(
                "N ({}) must be divisible by c ({})",
                self.layers, self.parts
            )));
        }
        if !self.rounds.is_multiple_of(self.parts) {
            return Err(Error::Config(format!(
                "T ({}) must be divisible by c ({})",
                self.rounds, self.parts
            )));
        }
        Ok(())
    }

    fn block_weights(&self) -> u128 {
        u128::from(self.w1) + u128::from(self.w2)
    }

    /// Depth exchanged in 1-based round `t` of the FedDT schedule.
    pub fn stage_depth(&self, round: u64) -> u64 {
        let stage = (round - 1) / (self.rounds / self.parts);
        (self.layers / self.parts) * (stage + 1)
    }
}

/// Non-negative rational with a reduced representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Fraction {
    pub num: u128,
    pub den: u128,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Fraction {
    pub fn new(num: u128, den: u128) -> Self {
        assert!(den != 0, "zero denominator");
        let g = gcd(num, den).max(1);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn as_integer(&self) -> Option<u128> {
        (self.den == 1).then_some(self.num)
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_integer() {
            Some(n) => write!(f, "{n}"),
            None => write!(f, "{}/{}", self.num, self.den),
        }
    }
}

/// `T·N·(W1+W2)`.
pub fn fedt_total(inputs: &CostInputs) -> u128 {
    u128::from(inputs.rounds) * u128::from(inputs.layers) * inputs.block_weights()
}

/// Explicit stage sum `Σₙ (T/c)·(N/c)(n+1)·(W1+W2)`.
pub fn feddt_total_series(inputs: &CostInputs) -> u128 {
    let per_stage_rounds = u128::from(inputs.rounds / inputs.parts);
    let q = u128::from(inputs.layers / inputs.parts);
    (0..u128::from(inputs.parts))
        .map(|n| per_stage_rounds * q * (n + 1) * inputs.block_weights())
        .sum()
}

/// The closed form `(T/2c)(N+1)(W1+W2)`.
pub fn feddt_total_closed_form(inputs: &CostInputs) -> Fraction {
    Fraction::new(
        u128::from(inputs.rounds) * (u128::from(inputs.layers) + 1) * inputs.block_weights(),
        2 * u128::from(inputs.parts),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReductionRatio {
    /// `feddt_total_series / fedt_total = (c+1)/(2c)`.
    pub series_ratio: f64,
    /// `1/(2c) + 1/(2cN)`.
    pub closed_form_ratio: f64,
    pub series_exact: Fraction,
    pub closed_form_exact: Fraction,
}

pub fn reduction_ratio(inputs: &CostInputs) -> ReductionRatio {
    let series_exact = Fraction::new(feddt_total_series(inputs), fedt_total(inputs));
    let (c, n) = (u128::from(inputs.parts), u128::from(inputs.layers));
    // 1/(2c) + 1/(2cN) = (N + 1) / (2cN)
    let closed_form_exact = Fraction::new(n + 1, 2 * c * n);
    ReductionRatio {
        series_ratio: series_exact.to_f64(),
        closed_form_ratio: closed_form_exact.to_f64(),
        series_exact,
        closed_form_exact,
    }
}

/// Everything `feddt cost` prints.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub schema_version: u32,
    pub inputs: CostInputs,
    pub fedt_total: u128,
    pub feddt_series_total: u128,
    pub feddt_closed_form_total: Fraction,
    pub series_ratio: f64,
    pub closed_form_ratio: f64,
    pub series_ratio_exact: Fraction,
    pub closed_form_ratio_exact: Fraction,
    pub note: String,
}

pub const COST_SCHEMA_VERSION: u32 = 1;

pub fn cost_report(inputs: &CostInputs) -> CostReport {
    let ratio = reduction_ratio(inputs);
    let series = feddt_total_series(inputs);
    let closed = feddt_total_closed_form(inputs);
    let note = format!(
        "stage sum over c={} stages of T/c={} rounds gives {series}; the closed form \
         (T/2c)(N+1)(W1+W2) gives {closed}. They differ by c*N*(c+1)/(c*(N+1)) = {}; \
         the stage sum is what a simulated run measures.",
        inputs.parts,
        inputs.rounds / inputs.parts,
        Fraction::new(
            u128::from(inputs.parts) * u128::from(inputs.layers) * (u128::from(inputs.parts) + 1),
            u128::from(inputs.parts) * (u128::from(inputs.layers) + 1),
        ),
    );
    CostReport {
        schema_version: COST_SCHEMA_VERSION,
        inputs: *inputs,
        fedt_total: fedt_total(inputs),
        feddt_series_total: series,
        feddt_closed_form_total: closed,
        series_ratio: ratio.series_ratio,
        closed_form_ratio: ratio.closed_form_ratio,
        series_ratio_exact: ratio.series_exact,
        closed_form_ratio_exact: ratio.closed_form_exact,
        note,
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = &self.inputs;
        writeln!(
            f,
            "inputs: T={} c={} N={} W1={} W2={}",
            i.rounds, i.parts, i.layers, i.w1, i.w2
        )?;
        writeln!(f, "{:<28}{:>16}", "FedT total", self.fedt_total)?;
        writeln!(
            f,
            "{:<28}{:>16}",
            "FedDT total (stage sum)", self.feddt_series_total
        )?;
        writeln!(
            f,
            "{:<28}{:>16}",
            "FedDT total (closed form)",
            self.feddt_closed_form_total.to_string()
        )?;
        writeln!(
            f,
            "{:<28}{:>16.4}  ({})",
            "ratio (stage sum)", self.series_ratio, self.series_ratio_exact
        )?;
        writeln!(
            f,
            "{:<28}{:>16.4}  ({})",
            "ratio (closed form)", self.closed_form_ratio, self.closed_form_ratio_exact
        )?;
        write!(f, "note: {}", self.note)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(t: u64, c: u64, n: u64, w1: u64, w2: u64) -> CostInputs {
        CostInputs::new(t, c, n, w1, w2).unwrap()
    }

    /// Per-round brute force over the depth trace of equal stages.
    fn brute_force(i: &CostInputs, grown: bool) -> u128 {
        (1..=i.rounds)
            .map(|t| {
                let depth = if grown { i.stage_depth(t) } else { i.layers };
                u128::from(depth) * u128::from(i.w1 + i.w2)
            })
            .sum()
    }

    #[test]
    fn fedt_examples() {
        let i = inputs(120, 6, 6, 1, 1);
        assert_eq!(fedt_total(&i), 1440);
        assert_eq!(fedt_total(&i), brute_force(&i, false));
        assert_eq!(fedt_total(&inputs(1, 1, 1, 1, 1)), 2);
        assert_eq!(fedt_total(&inputs(240, 6, 6, 1, 1)), 2 * 1440);
    }

    #[test]
    fn series_examples() {
        let i = inputs(120, 6, 6, 1, 1);
        assert_eq!(feddt_total_series(&i), 840);
        assert_eq!(feddt_total_series(&i), brute_force(&i, true));
        let j = inputs(120, 1, 6, 3, 4);
        assert_eq!(feddt_total_series(&j), fedt_total(&j));
        assert_eq!(feddt_total_series(&inputs(12, 2, 2, 1, 1)), 36);
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(
            feddt_total_closed_form(&inputs(120, 6, 6, 1, 1)).as_integer(),
            Some(140)
        );
        let i = inputs(50, 1, 1, 2, 5);
        assert_eq!(
            feddt_total_closed_form(&i).as_integer(),
            Some(fedt_total(&i))
        );
    }

    #[test]
    fn closed_form_differs_by_documented_factor() {
        for (t, c, n) in [(120, 6, 6), (60, 3, 6), (40, 4, 8), (24, 2, 2), (30, 5, 10)] {
            let i = inputs(t, c, n, 3, 7);
            let series = feddt_total_series(&i);
            let closed = feddt_total_closed_form(&i);
            // series / closed == c·N(c+1) / (c(N+1))
            let (c, n) = (u128::from(c), u128::from(n));
            assert_eq!(
                series * closed.den * c * (n + 1),
                closed.num * c * n * (c + 1)
            );
        }
    }

    #[test]
    fn ratio_examples() {
        let r = reduction_ratio(&inputs(120, 6, 6, 1, 1));
        assert_eq!(r.series_exact, Fraction::new(7, 12));
        assert!((r.series_ratio - 0.5833).abs() < 1e-4);
        assert_eq!(r.closed_form_exact, Fraction::new(7, 72));
        assert!((r.closed_form_ratio - 0.0972).abs() < 1e-4);
        assert_eq!(reduction_ratio(&inputs(10, 1, 3, 1, 1)).series_ratio, 1.0);
    }

    #[test]
    fn series_ratio_depends_only_on_c() {
        let mut by_c = Vec::new();
        for c in 1..=6u64 {
            let mut seen = None;
            for (t_mul, n_mul, w1, w2) in [(1, 1, 1, 1), (3, 2, 5, 9), (10, 4, 100, 7)] {
                let i = inputs(c * t_mul * 2, c, c * n_mul, w1, w2);
                let r = reduction_ratio(&i).series_exact;
                assert_eq!(r, Fraction::new(u128::from(c) + 1, 2 * u128::from(c)));
                assert!(r.to_f64() > 0.5 && r.to_f64() <= 1.0);
                if c > 1 {
                    assert!(feddt_total_series(&i) < fedt_total(&i));
                }
                seen.get_or_insert(r);
            }
            by_c.push(seen.unwrap().to_f64());
        }
        assert!(by_c.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(
            CostInputs::new(120, 4, 6, 1, 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            CostInputs::new(0, 1, 1, 1, 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            CostInputs::new(10, 3, 3, 1, 1),
            Err(Error::Config(_))
        ));
    }
}
