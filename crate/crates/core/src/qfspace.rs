//! Bidding quantile functions: maps from a uniform quantile in `[0, 1]` to a bid.
//!
//! Every representation is continuous. Parametric kinds carry closed-form
//! derivatives and integrals so that the head/tail constructions used by the
//! transforms stay exact at their join points; piecewise-linear functions are
//! the general-purpose fallback.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for value continuity at join points.
pub const JOIN_VALUE_TOL: f64 = 1e-9;
/// Absolute tolerance for derivative continuity at join points.
pub const JOIN_SLOPE_TOL: f64 = 1e-6;

const MONOTONE_CHECK_GRID: usize = 1024;
const RANGE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuantileFunction {
    /// `lo + (hi - lo) q`.
    Uniform { lo: f64, hi: f64 },
    /// Linear interpolation through `(grid[k], values[k])`.
    PiecewiseLinear { grid: Vec<f64>, values: Vec<f64> },
    /// `level exp(rate (q - join))` below `join`, `tail` from `join` on.
    ExpHead {
        level: f64,
        rate: f64,
        #[serde(rename = "join_quantile")]
        join: f64,
        tail: Box<QuantileFunction>,
    },
    /// `level sin(rate q + pi/4) + level` below `join`, `tail` from `join` on.
    SineHead {
        level: f64,
        rate: f64,
        #[serde(rename = "join_quantile")]
        join: f64,
        tail: Box<QuantileFunction>,
    },
    /// `offset` below `join`, then `offset + scale u^exponent` with
    /// `u = (q - join) / (1 - join)`.
    PowerTail {
        offset: f64,
        scale: f64,
        exponent: f64,
        #[serde(rename = "join_quantile")]
        join: f64,
    },
    /// `offset` below `join`, then `offset + scale (1 - e^{-rate u}) / (1 - e^{-rate})`
    /// with `u = (q - join) / (1 - join)`; `rate = 0` is the linear limit.
    SaturatingTail {
        offset: f64,
        scale: f64,
        rate: f64,
        #[serde(rename = "join_quantile")]
        join: f64,
    },
    /// `(1 / (1 - x)) * integral of base over [x, 1]`, and `base(1)` at `x = 1`.
    IntegralAverage { base: Box<QuantileFunction> },
    /// `base(q) - (1 - q) base'(q)`. May be negative; not a bidding function on its own.
    Virtual { base: Box<QuantileFunction> },
    /// `clamp(scale * base(q) + shift, 0, 1)`.
    Affine {
        base: Box<QuantileFunction>,
        scale: f64,
        shift: f64,
    },
}

use QuantileFunction as Qf;

impl QuantileFunction {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let f = Qf::Uniform { lo, hi };
        f.validate_bidding()?;
        Ok(f)
    }

    /// The identity quantile function, i.e. bids uniform on `[0, 1]`.
    pub fn identity() -> Self {
        Qf::Uniform { lo: 0.0, hi: 1.0 }
    }

    pub fn piecewise_linear(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let f = Qf::PiecewiseLinear { grid, values };
        f.validate()?;
        Ok(f)
    }

    /// Piecewise-linear function through `values` placed on a uniform grid.
    pub fn on_uniform_grid(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidQuantileFunction(
                "need at least two grid values".into(),
            ));
        }
        let m = values.len() - 1;
        let grid = (0..=m).map(|k| k as f64 / m as f64).collect();
        Self::piecewise_linear(grid, values)
    }

    pub fn virtual_of(base: QuantileFunction) -> Self {
        Qf::Virtual {
            base: Box::new(base),
        }
    }

    pub fn integral_average_of(base: QuantileFunction) -> Self {
        Qf::IntegralAverage {
            base: Box::new(base),
        }
    }

    /// Checked evaluation.
    pub fn eval(&self, q: f64) -> Result<f64> {
        check_quantile(q)?;
        Ok(self.at(q))
    }

    /// Checked derivative (right-derivative at kinks, left-derivative at 1).
    pub fn derivative(&self, q: f64) -> Result<f64> {
        check_quantile(q)?;
        Ok(self.slope(q))
    }

    /// Evaluation without domain checks; `q` is clamped into `[0, 1]`.
    pub fn at(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        match self {
            Qf::Uniform { lo, hi } => lo + (hi - lo) * q,
            Qf::PiecewiseLinear { grid, values } => {
                let k = segment_index(grid, q);
                let t = (q - grid[k]) / (grid[k + 1] - grid[k]);
                values[k] + (values[k + 1] - values[k]) * t
            }
            Qf::ExpHead {
                level,
                rate,
                join,
                tail,
            } => {
                if q < *join {
                    level * (rate * (q - join)).exp()
                } else {
                    tail.at(q)
                }
            }
            Qf::SineHead {
                level,
                rate,
                join,
                tail,
            } => {
                if q < *join {
                    level * (rate * q + FRAC_PI_4).sin() + level
                } else {
                    tail.at(q)
                }
            }
            Qf::PowerTail {
                offset,
                scale,
                exponent,
                join,
            } => match tail_coordinate(q, *join) {
                None => *offset,
                Some(u) => offset + scale * u.powf(*exponent),
            },
            Qf::SaturatingTail {
                offset,
                scale,
                rate,
                join,
            } => match tail_coordinate(q, *join) {
                None => *offset,
                Some(u) => offset + scale * saturating(u, *rate),
            },
            Qf::IntegralAverage { base } => {
                if q >= 1.0 {
                    base.at(1.0)
                } else {
                    base.integral(q, 1.0) / (1.0 - q)
                }
            }
            Qf::Virtual { base } => base.at(q) - (1.0 - q) * base.slope(q),
            Qf::Affine { base, scale, shift } => (scale * base.at(q) + shift).clamp(0.0, 1.0),
        }
    }

    /// Unchecked derivative; right-derivative at kinks, left-derivative at 1.
    pub fn slope(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        match self {
            Qf::Uniform { lo, hi } => hi - lo,
            Qf::PiecewiseLinear { grid, values } => {
                let k = segment_index(grid, q);
                (values[k + 1] - values[k]) / (grid[k + 1] - grid[k])
            }
            Qf::ExpHead {
                level,
                rate,
                join,
                tail,
            } => {
                if q < *join {
                    level * rate * (rate * (q - join)).exp()
                } else {
                    tail.slope(q)
                }
            }
            Qf::SineHead {
                level,
                rate,
                join,
                tail,
            } => {
                if q < *join {
                    level * rate * (rate * q + FRAC_PI_4).cos()
                } else {
                    tail.slope(q)
                }
            }
            Qf::PowerTail {
                scale,
                exponent,
                join,
                ..
            } => match tail_coordinate(q, *join) {
                None => 0.0,
                Some(u) => {
                    let du = if *exponent == 1.0 {
                        1.0
                    } else {
                        exponent * u.powf(exponent - 1.0)
                    };
                    scale * du / (1.0 - join)
                }
            },
            Qf::SaturatingTail {
                scale, rate, join, ..
            } => match tail_coordinate(q, *join) {
                None => 0.0,
                Some(u) => scale * saturating_slope(u, *rate) / (1.0 - join),
            },
            Qf::IntegralAverage { base } => {
                let gap = 1.0 - q;
                if gap < 1e-7 {
                    0.5 * base.slope(q)
                } else {
                    (self.at(q) - base.at(q)) / gap
                }
            }
            Qf::Virtual { base } => 2.0 * base.slope(q) - (1.0 - q) * base.curvature(q),
            Qf::Affine { base, scale, shift } => {
                let inner = scale * base.at(q) + shift;
                if inner <= 0.0 || inner >= 1.0 {
                    0.0
                } else {
                    scale * base.slope(q)
                }
            }
        }
    }

    /// Second derivative, with the same one-sided conventions as [`Self::slope`].
    pub fn curvature(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        match self {
            Qf::Uniform { .. } | Qf::PiecewiseLinear { .. } => 0.0,
            Qf::ExpHead {
                level,
                rate,
                join,
                tail,
            } => {
                if q < *join {
                    level * rate * rate * (rate * (q - join)).exp()
                } else {
                    tail.curvature(q)
                }
            }
            Qf::SineHead {
                level,
                rate,
                join,
                tail,
            } => {
                if q < *join {
                    -level * rate * rate * (rate * q + FRAC_PI_4).sin()
                } else {
                    tail.curvature(q)
                }
            }
            Qf::PowerTail {
                scale,
                exponent,
                join,
                ..
            } => match tail_coordinate(q, *join) {
                None => 0.0,
                Some(u) => {
                    let e = *exponent;
                    if e == 1.0 || e == 2.0 {
                        scale * e * (e - 1.0) / ((1.0 - join) * (1.0 - join))
                    } else {
                        scale * e * (e - 1.0) * u.powf(e - 2.0) / ((1.0 - join) * (1.0 - join))
                    }
                }
            },
            Qf::SaturatingTail {
                scale, rate, join, ..
            } => match tail_coordinate(q, *join) {
                None => 0.0,
                Some(u) => {
                    -rate * scale * saturating_slope(u, *rate) / ((1.0 - join) * (1.0 - join))
                }
            },
            Qf::IntegralAverage { base } => {
                let gap = 1.0 - q;
                if gap < 1e-5 {
                    base.curvature(q) / 3.0
                } else {
                    (2.0 * self.slope(q) - base.slope(q)) / gap
                }
            }
            Qf::Virtual { .. } => {
                let h = 1e-6;
                let (a, b) = if q < h {
                    (q, q + h)
                } else if q > 1.0 - h {
                    (q - h, q)
                } else {
                    (q - 0.5 * h, q + 0.5 * h)
                };
                (self.slope(b) - self.slope(a)) / (b - a)
            }
            Qf::Affine { base, scale, shift } => {
                let inner = scale * base.at(q) + shift;
                if inner <= 0.0 || inner >= 1.0 {
                    0.0
                } else {
                    scale * base.curvature(q)
                }
            }
        }
    }

    /// Integral of the function over `[a, b]`, `0 <= a <= b <= 1`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let (a, b) = (a.clamp(0.0, 1.0), b.clamp(0.0, 1.0));
        if b <= a {
            return 0.0;
        }
        match self {
            Qf::Uniform { lo, hi } => lo * (b - a) + 0.5 * (hi - lo) * (b - a) * (b + a),
            Qf::PiecewiseLinear { grid, values } => {
                let mut total = 0.0;
                let first = segment_index(grid, a);
                for k in first..grid.len() - 1 {
                    let lo = grid[k].max(a);
                    let hi = grid[k + 1].min(b);
                    if hi <= lo {
                        if grid[k] >= b {
                            break;
                        }
                        continue;
                    }
                    let slope = (values[k + 1] - values[k]) / (grid[k + 1] - grid[k]);
                    let v_lo = values[k] + slope * (lo - grid[k]);
                    let v_hi = values[k] + slope * (hi - grid[k]);
                    total += 0.5 * (v_lo + v_hi) * (hi - lo);
                }
                total
            }
            Qf::ExpHead {
                level,
                rate,
                join,
                tail,
            } => {
                let mut total = 0.0;
                let head_end = b.min(*join);
                if head_end > a {
                    total += if *rate == 0.0 {
                        level * (head_end - a)
                    } else {
                        level
                            * ((rate * (head_end - join)).exp() - (rate * (a - join)).exp())
                            / rate
                    };
                }
                let tail_start = a.max(*join);
                if b > tail_start {
                    total += tail.integral(tail_start, b);
                }
                total
            }
            Qf::SineHead {
                level,
                rate,
                join,
                tail,
            } => {
                let mut total = 0.0;
                let head_end = b.min(*join);
                if head_end > a {
                    let anti = |q: f64| -level * (rate * q + FRAC_PI_4).cos() / rate + level * q;
                    total += anti(head_end) - anti(a);
                }
                let tail_start = a.max(*join);
                if b > tail_start {
                    total += tail.integral(tail_start, b);
                }
                total
            }
            Qf::PowerTail {
                offset,
                scale,
                exponent,
                join,
            } => {
                let mut total = offset * (b - a);
                if *join < 1.0 && b > *join {
                    let width = 1.0 - join;
                    let ua = ((a - join) / width).max(0.0);
                    let ub = ((b - join) / width).min(1.0);
                    let e1 = exponent + 1.0;
                    total += scale * width * (ub.powf(e1) - ua.powf(e1)) / e1;
                }
                total
            }
            Qf::SaturatingTail {
                offset,
                scale,
                rate,
                join,
            } => {
                let mut total = offset * (b - a);
                if *join < 1.0 && b > *join {
                    let width = 1.0 - join;
                    let ua = ((a - join) / width).max(0.0);
                    let ub = ((b - join) / width).min(1.0);
                    total += scale
                        * width
                        * (saturating_antiderivative(ub, *rate)
                            - saturating_antiderivative(ua, *rate));
                }
                total
            }
            Qf::Virtual { base } => (1.0 - a) * base.at(a) - (1.0 - b) * base.at(b),
            Qf::IntegralAverage { .. } | Qf::Affine { .. } => self.numeric_integral(a, b),
        }
    }

    fn numeric_integral(&self, a: f64, b: f64) -> f64 {
        let mut cuts = vec![a];
        cuts.extend(self.kinks().into_iter().filter(|&k| k > a && k < b));
        cuts.push(b);
        cuts.sort_by(f64::total_cmp);
        cuts.windows(2)
            .map(|w| crate::quadrature::gauss_legendre_composite(|q| self.at(q), w[0], w[1], 64))
            .sum()
    }

    /// Interior quantiles where the function or its derivative may jump.
    pub fn kinks(&self) -> Vec<f64> {
        let mut out = match self {
            Qf::Uniform { .. } => Vec::new(),
            Qf::PiecewiseLinear { grid, .. } => grid[1..grid.len() - 1].to_vec(),
            Qf::ExpHead { join, tail, .. } | Qf::SineHead { join, tail, .. } => {
                let mut k = vec![*join];
                k.extend(tail.kinks().into_iter().filter(|&x| x > *join));
                k
            }
            Qf::PowerTail { join, .. } | Qf::SaturatingTail { join, .. } => vec![*join],
            Qf::IntegralAverage { base } | Qf::Virtual { base } | Qf::Affine { base, .. } => {
                base.kinks()
            }
        };
        out.retain(|&k| k > 0.0 && k < 1.0);
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Generalized inverse `sup { q : f(q) <= v }`, clamped to `[0, 1]`;
    /// returns 0 when `v < f(0)`.
    pub fn cdf(&self, v: f64) -> f64 {
        if v.is_nan() {
            return 0.0;
        }
        match self {
            Qf::Uniform { lo, hi } => {
                if v < *lo {
                    0.0
                } else if v >= *hi {
                    1.0
                } else {
                    (v - lo) / (hi - lo)
                }
            }
            Qf::PiecewiseLinear { grid, values } => {
                let last = values.len() - 1;
                if v < values[0] {
                    return 0.0;
                }
                if v >= values[last] {
                    return 1.0;
                }
                let k = values.partition_point(|&x| x <= v) - 1;
                let t = (v - values[k]) / (values[k + 1] - values[k]);
                grid[k] + t * (grid[k + 1] - grid[k])
            }
            Qf::ExpHead {
                level,
                rate,
                join,
                tail,
            } => {
                let at_join = tail.at(*join);
                if *join > 0.0 && v < at_join {
                    if v < self.at(0.0) {
                        0.0
                    } else if *rate == 0.0 {
                        *join
                    } else {
                        (join + (v / level).ln() / rate).clamp(0.0, *join)
                    }
                } else {
                    tail.cdf(v).max(*join)
                }
            }
            Qf::SineHead {
                level,
                rate,
                join,
                tail,
            } => {
                let at_join = tail.at(*join);
                if *join > 0.0 && v < at_join {
                    let s = v / level - 1.0;
                    if s < FRAC_PI_4.sin() {
                        0.0
                    } else {
                        ((s.min(1.0).asin() - FRAC_PI_4) / rate).clamp(0.0, *join)
                    }
                } else {
                    tail.cdf(v).max(*join)
                }
            }
            Qf::PowerTail {
                offset,
                scale,
                exponent,
                join,
            } => {
                if v < *offset {
                    0.0
                } else if *scale <= 0.0 || v >= offset + scale {
                    1.0
                } else {
                    let u = ((v - offset) / scale).powf(1.0 / exponent);
                    (join + u * (1.0 - join)).clamp(0.0, 1.0)
                }
            }
            Qf::SaturatingTail {
                offset,
                scale,
                rate,
                join,
            } => {
                if v < *offset {
                    0.0
                } else if *scale <= 0.0 || v >= offset + scale {
                    1.0
                } else {
                    let phi = (v - offset) / scale;
                    let u = if *rate < 1e-9 {
                        phi
                    } else {
                        -(phi * (-rate).exp_m1()).ln_1p() / rate
                    };
                    (join + u.clamp(0.0, 1.0) * (1.0 - join)).clamp(0.0, 1.0)
                }
            }
            Qf::Affine { base, scale, shift } => {
                if v < 0.0 {
                    0.0
                } else if v >= 1.0 {
                    1.0
                } else if *scale <= 0.0 {
                    if v >= shift.clamp(0.0, 1.0) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    base.cdf((v - shift) / scale)
                }
            }
            Qf::Virtual { base } => match base.as_ref() {
                Qf::PiecewiseLinear { grid, values } if self.at(1.0) > v && self.at(0.0) <= v => {
                    virtual_pl_cdf(grid, values, v)
                }
                _ => self.bisect_cdf(v),
            },
            Qf::IntegralAverage { .. } => self.bisect_cdf(v),
        }
    }

    fn bisect_cdf(&self, v: f64) -> f64 {
        if self.at(1.0) <= v {
            return 1.0;
        }
        if self.at(0.0) > v {
            return 0.0;
        }
        let (lo, _) = crate::roots::bisect_predicate(0.0, 1.0, 1e-15, |q| self.at(q) <= v);
        lo
    }

    /// Structural validation: parameter ranges, grid shape, join continuity.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidQuantileFunction(msg));
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            Qf::Uniform { lo, hi } => {
                if !finite(&[*lo, *hi]) || lo > hi {
                    return bad(format!("uniform bounds need lo <= hi, got [{lo}, {hi}]"));
                }
            }
            Qf::PiecewiseLinear { grid, values } => {
                if grid.len() != values.len() {
                    return bad(format!(
                        "grid has {} points but values has {}",
                        grid.len(),
                        values.len()
                    ));
                }
                if grid.len() < 2 {
                    return bad("piecewise-linear needs at least two points".into());
                }
                if !finite(grid) || !finite(values) {
                    return bad("non-finite grid or value".into());
                }
                if grid[0] != 0.0 || grid[grid.len() - 1] != 1.0 {
                    return bad("grid must start at 0 and end at 1".into());
                }
                if let Some(k) = grid.windows(2).position(|w| w[1] <= w[0]) {
                    return bad(format!("grid not strictly increasing at index {}", k + 1));
                }
                if let Some(k) = values.windows(2).position(|w| w[1] < w[0]) {
                    return bad(format!("values decrease at index {}", k + 1));
                }
            }
            Qf::ExpHead {
                level,
                rate,
                join,
                tail,
            } => {
                if !finite(&[*level, *rate, *join]) || *level < 0.0 || *rate < 0.0 {
                    return bad(format!(
                        "exponential head needs level, rate >= 0, got {level}, {rate}"
                    ));
                }
                if !(0.0..=1.0).contains(join) {
                    return bad(format!("join quantile {join} outside [0, 1]"));
                }
                tail.validate()?;
                if *join > 0.0 {
                    check_join(*join, *level, level * rate, tail)?;
                }
            }
            Qf::SineHead {
                level,
                rate,
                join,
                tail,
            } => {
                if !finite(&[*level, *rate, *join]) || *level < 0.0 || *rate <= 0.0 {
                    return bad(format!("sine head needs level >= 0, rate > 0, got {level}, {rate}"));
                }
                if !(0.0..=1.0).contains(join) {
                    return bad(format!("join quantile {join} outside [0, 1]"));
                }
                tail.validate()?;
                if *join > 0.0 {
                    let arg = rate * join + FRAC_PI_4;
                    check_join(
                        *join,
                        level * arg.sin() + level,
                        level * rate * arg.cos(),
                        tail,
                    )?;
                }
            }
            Qf::PowerTail {
                offset,
                scale,
                exponent,
                join,
            } => {
                if !finite(&[*offset, *scale, *exponent, *join])
                    || *offset < 0.0
                    || *scale < 0.0
                    || offset + scale > 1.0 + RANGE_SLACK
                    || *exponent <= 0.0
                    || !(0.0..1.0).contains(join)
                {
                    return bad(format!(
                        "power tail parameters out of range: offset {offset}, scale {scale}, exponent {exponent}, join {join}"
                    ));
                }
            }
            Qf::SaturatingTail {
                offset,
                scale,
                rate,
                join,
            } => {
                if !finite(&[*offset, *scale, *rate, *join])
                    || *offset < 0.0
                    || *scale < 0.0
                    || offset + scale > 1.0 + RANGE_SLACK
                    || *rate < 0.0
                    || !(0.0..1.0).contains(join)
                {
                    return bad(format!(
                        "saturating tail parameters out of range: offset {offset}, scale {scale}, rate {rate}, join {join}"
                    ));
                }
            }
            Qf::IntegralAverage { base } | Qf::Virtual { base } => base.validate()?,
            Qf::Affine { base, scale, shift } => {
                if !finite(&[*scale, *shift]) || *scale < 0.0 {
                    return bad(format!("affine map needs scale >= 0, got {scale}"));
                }
                base.validate()?;
            }
        }
        Ok(())
    }

    /// Validation for use as a bid or value distribution: structure plus
    /// weak monotonicity and range `[0, 1]` on a dense grid.
    pub fn validate_bidding(&self) -> Result<()> {
        self.validate()?;
        let mut prev = self.at(0.0);
        if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&prev) {
            return Err(Error::InvalidQuantileFunction(format!(
                "value {prev} at q = 0 lies outside [0, 1]"
            )));
        }
        for k in 1..=MONOTONE_CHECK_GRID {
            let q = k as f64 / MONOTONE_CHECK_GRID as f64;
            let v = self.at(q);
            if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&v) {
                return Err(Error::InvalidQuantileFunction(format!(
                    "value {v} at q = {q} lies outside [0, 1]"
                )));
            }
            if v < prev - RANGE_SLACK {
                return Err(Error::InvalidQuantileFunction(format!(
                    "not increasing: f({q}) = {v} < {prev}"
                )));
            }
            prev = v;
        }
        Ok(())
    }

    pub fn virtualize(&self) -> VirtualQf {
        VirtualQf { base: self.clone() }
    }

    /// Lower bound on `(f(q2) - f(q1)) / (q2 - q1)` over `[0, 1]`.
    ///
    /// Closed form for the parametric kinds; otherwise the minimum difference
    /// quotient over a uniform grid with `grid_size` points.
    pub fn inverse_lipschitz_lower(&self, grid_size: usize) -> f64 {
        self.slope_lower_on(0.0, 1.0, grid_size.max(2))
    }

    fn slope_lower_on(&self, a: f64, b: f64, grid_size: usize) -> f64 {
        match self {
            Qf::Uniform { lo, hi } => hi - lo,
            Qf::PiecewiseLinear { grid, values } => grid
                .windows(2)
                .zip(values.windows(2))
                .filter(|(g, _)| g[1] > a && g[0] < b)
                .map(|(g, v)| (v[1] - v[0]) / (g[1] - g[0]))
                .fold(f64::INFINITY, f64::min),
            Qf::ExpHead {
                level,
                rate,
                join,
                tail,
            } => {
                let head = if a < *join {
                    level * rate * (rate * (a - join)).exp()
                } else {
                    f64::INFINITY
                };
                let tail_lo = if b > *join {
                    tail.slope_lower_on(a.max(*join), b, grid_size)
                } else {
                    f64::INFINITY
                };
                head.min(tail_lo)
            }
            Qf::SineHead { join, tail, .. } => {
                if a < *join {
                    0.0
                } else {
                    tail.slope_lower_on(a, b, grid_size)
                }
            }
            Qf::PowerTail {
                scale,
                exponent,
                join,
                ..
            } => {
                if a < *join || *scale == 0.0 {
                    return 0.0;
                }
                let width = 1.0 - join;
                let e = *exponent;
                if e == 1.0 {
                    scale / width
                } else if e > 1.0 {
                    let ua = (a - join) / width;
                    scale * e * ua.powf(e - 1.0) / width
                } else {
                    let ub = (b - join) / width;
                    scale * e * ub.powf(e - 1.0) / width
                }
            }
            Qf::SaturatingTail {
                scale, rate, join, ..
            } => {
                if a < *join {
                    return 0.0;
                }
                let ub = (b - join) / (1.0 - join);
                scale * saturating_slope(ub, *rate) / (1.0 - join)
            }
            _ => {
                let n = grid_size.max(2) - 1;
                let h = (b - a) / n as f64;
                let mut prev = self.at(a);
                let mut lower = f64::INFINITY;
                for k in 1..=n {
                    let q = a + k as f64 * h;
                    let v = self.at(q);
                    lower = lower.min((v - prev) / h);
                    prev = v;
                }
                lower
            }
        }
    }

    pub fn min_value(&self) -> f64 {
        self.at(0.0)
    }

    pub fn max_value(&self) -> f64 {
        self.at(1.0)
    }
}

/// The virtual bidding quantile function `psi(q) = f(q) - (1 - q) f'(q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualQf {
    pub base: QuantileFunction,
}

impl VirtualQf {
    pub fn at(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        self.base.at(q) - (1.0 - q) * self.base.slope(q)
    }

    pub fn eval(&self, q: f64) -> Result<f64> {
        check_quantile(q)?;
        Ok(self.at(q))
    }

    /// Whether `psi` is strictly increasing on a uniform grid of `grid_size` points.
    pub fn is_strictly_increasing(&self, grid_size: usize) -> bool {
        let n = grid_size.max(2) - 1;
        let mut prev = self.at(0.0);
        (1..=n).all(|k| {
            let v = self.at(k as f64 / n as f64);
            let up = v > prev;
            prev = v;
            up
        })
    }

    pub fn into_quantile_function(self) -> QuantileFunction {
        QuantileFunction::virtual_of(self.base)
    }
}

/// Sorts the sampled bids ascending and interpolates them on the same grid.
pub fn increasing_rearrangement(samples: &[(f64, f64)]) -> Result<QuantileFunction> {
    if samples.len() < 2 {
        return Err(Error::InvalidQuantileFunction(
            "rearrangement needs at least two samples".into(),
        ));
    }
    let m = (samples.len() - 1) as f64;
    for (k, &(q, _)) in samples.iter().enumerate() {
        if (q - k as f64 / m).abs() > 1e-9 {
            return Err(Error::InvalidQuantileFunction(format!(
                "sample {k} at quantile {q} is off the uniform grid"
            )));
        }
    }
    let mut values: Vec<f64> = samples.iter().map(|s| s.1).collect();
    values.sort_by(f64::total_cmp);
    QuantileFunction::on_uniform_grid(values)
}

fn check_quantile(q: f64) -> Result<()> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(Error::Domain(q))
    }
}

fn check_join(join: f64, head_value: f64, head_slope: f64, tail: &QuantileFunction) -> Result<()> {
    let (tv, ts) = (tail.at(join), tail.slope(join));
    if head_value > tv + JOIN_VALUE_TOL {
        return Err(Error::InvalidQuantileFunction(format!(
            "head value {head_value} exceeds tail value {tv} at join {join}"
        )));
    }
    if head_value < tv - JOIN_VALUE_TOL {
        // An upward jump, as where the tail itself jumps.
        return Ok(());
    }
    if (head_slope - ts).abs() > JOIN_SLOPE_TOL {
        return Err(Error::InvalidQuantileFunction(format!(
            "head slope {head_slope} differs from tail slope {ts} at join {join}"
        )));
    }
    Ok(())
}

/// `sup{q : psi(q) <= v}` for the virtual function of a piecewise-linear
/// base. On piece `k` with slope `m`, `psi(q) = values[k] + m (q - grid[k]) - (1 - q) m`,
/// which is linear with slope `2m`.
fn virtual_pl_cdf(grid: &[f64], values: &[f64], v: f64) -> f64 {
    for k in (0..grid.len() - 1).rev() {
        let (g0, g1) = (grid[k], grid[k + 1]);
        let m = (values[k + 1] - values[k]) / (g1 - g0);
        let start = values[k] - (1.0 - g0) * m;
        if start > v {
            continue;
        }
        if m <= 0.0 {
            return g1;
        }
        return (g0 + (v - start) / (2.0 * m)).min(g1);
    }
    0.0
}

/// Index `k` of the segment `[grid[k], grid[k+1])` holding `q`; the last
/// segment for `q = 1`.
fn segment_index(grid: &[f64], q: f64) -> usize {
    grid.partition_point(|&g| g <= q)
        .saturating_sub(1)
        .min(grid.len() - 2)
}

fn tail_coordinate(q: f64, join: f64) -> Option<f64> {
    if q < join || join >= 1.0 {
        None
    } else {
        Some(((q - join) / (1.0 - join)).clamp(0.0, 1.0))
    }
}

fn saturating(u: f64, rate: f64) -> f64 {
    if rate < 1e-9 {
        u
    } else {
        (-rate * u).exp_m1() / (-rate).exp_m1()
    }
}

fn saturating_slope(u: f64, rate: f64) -> f64 {
    if rate < 1e-9 {
        1.0
    } else {
        -rate * (-rate * u).exp() / (-rate).exp_m1()
    }
}

fn saturating_antiderivative(u: f64, rate: f64) -> f64 {
    if rate < 1e-6 {
        0.5 * u * u
    } else {
        (u + (-rate * u).exp_m1() / rate) / -(-rate).exp_m1()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_pl() -> QuantileFunction {
        QuantileFunction::piecewise_linear(vec![0.0, 0.5, 1.0], vec![0.0, 0.2, 1.0]).unwrap()
    }

    #[test]
    fn virtual_pl_cdf_matches_bisection() {
        let bases = [
            example_pl(),
            QuantileFunction::piecewise_linear(vec![0.0, 0.3, 0.6, 1.0], vec![0.1, 0.1, 0.5, 0.9]).unwrap(),
            QuantileFunction::piecewise_linear(vec![0.0, 0.25, 1.0], vec![0.0, 0.6, 0.7]).unwrap(),
        ];
        for base in bases {
            let psi = QuantileFunction::virtual_of(base);
            for k in 0..=60 {
                let v = -1.2 + 2.4 * k as f64 / 60.0;
                let fast = psi.cdf(v);
                let slow = psi.bisect_cdf(v);
                assert!((fast - slow).abs() < 1e-12, "v={v} fast={fast} slow={slow}");
            }
        }
    }

    #[test]
    fn uniform_eval_and_slope() {
        let f = QuantileFunction::identity();
        assert_eq!(f.eval(0.4).unwrap(), 0.4);
        assert_eq!(f.derivative(0.3).unwrap(), 1.0);
        assert_eq!(f.eval(1.0).unwrap(), f.max_value());
    }

    #[test]
    fn domain_errors() {
        let f = QuantileFunction::identity();
        assert!(matches!(f.eval(1.5), Err(Error::Domain(_))));
        assert!(matches!(f.derivative(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn piecewise_linear_interpolates_with_right_slopes() {
        let f = example_pl();
        assert!((f.eval(0.75).unwrap() - 0.6).abs() < 1e-15);
        assert!((f.derivative(0.5).unwrap() - 1.6).abs() < 1e-15);
        assert!((f.derivative(0.25).unwrap() - 0.4).abs() < 1e-15);
        assert!((f.derivative(1.0).unwrap() - 1.6).abs() < 1e-15);
    }

    #[test]
    fn cdf_basics() {
        let f = QuantileFunction::identity();
        assert_eq!(f.cdf(0.25), 0.25);
        assert_eq!(f.cdf(-0.1), 0.0);
        assert_eq!(f.cdf(1.0), 1.0);
        assert_eq!(example_pl().cdf(2.0), 1.0);
        assert!((example_pl().cdf(0.6) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn cdf_on_flat_segment_takes_supremum() {
        let f = QuantileFunction::piecewise_linear(
            vec![0.0, 0.25, 0.5, 1.0],
            vec![0.1, 0.3, 0.3, 0.8],
        )
        .unwrap();
        assert_eq!(f.cdf(0.3), 0.5);
        assert_eq!(f.cdf(0.05), 0.0);
    }

    #[test]
    fn virtual_of_identity_is_two_q_minus_one() {
        let psi = QuantileFunction::identity().virtualize();
        for k in 0..=100 {
            let q = k as f64 / 100.0;
            assert!((psi.at(q) - (2.0 * q - 1.0)).abs() < 1e-15);
        }
        assert_eq!(psi.at(1.0), 1.0);
    }

    #[test]
    fn virtual_equals_base_on_flat_tail() {
        let f = QuantileFunction::PowerTail {
            offset: 0.3,
            scale: 0.5,
            exponent: 2.0,
            join: 0.4,
        };
        let psi = f.virtualize();
        for q in [0.0, 0.1, 0.39] {
            assert_eq!(psi.at(q), f.at(q));
        }
    }

    #[test]
    fn inverse_lipschitz_examples() {
        assert_eq!(QuantileFunction::identity().inverse_lipschitz_lower(100), 1.0);
        let flat = QuantileFunction::piecewise_linear(
            vec![0.0, 0.5, 1.0],
            vec![0.2, 0.2, 0.9],
        )
        .unwrap();
        assert_eq!(flat.inverse_lipschitz_lower(100), 0.0);

        let tail = QuantileFunction::Uniform { lo: 0.0, hi: 1.0 };
        let (join, a2) = (0.3_f64, 1.0 / 0.3);
        let a1 = 0.3 / (a2 * join).exp();
        let head = QuantileFunction::ExpHead {
            level: 0.3,
            rate: a2,
            join,
            tail: Box::new(tail),
        };
        head.validate().unwrap();
        let analytic = head.inverse_lipschitz_lower(1000);
        assert!((analytic - a1 * a2).abs() < 1e-15);
        let scanned = QuantileFunction::Affine {
            base: Box::new(head.clone()),
            scale: 1.0,
            shift: 0.0,
        }
        .inverse_lipschitz_lower(10_000);
        assert!(scanned >= analytic - 1e-9 && scanned - analytic < 1e-3);
    }

    #[test]
    fn rearrangement_sorts_values() {
        let out = increasing_rearrangement(&[(0.0, 0.5), (0.5, 0.1), (1.0, 0.9)]).unwrap();
        match out {
            QuantileFunction::PiecewiseLinear { values, .. } => assert_eq!(values, vec![0.1, 0.5, 0.9]),
            other => panic!("unexpected kind {other:?}"),
        }
        let sorted = [(0.0, 0.1), (0.5, 0.5), (1.0, 0.9)];
        let again = increasing_rearrangement(&sorted).unwrap();
        assert_eq!(
            again,
            QuantileFunction::on_uniform_grid(vec![0.1, 0.5, 0.9]).unwrap()
        );
        assert!(increasing_rearrangement(&[(0.0, 0.1), (0.7, 0.2), (1.0, 0.3)]).is_err());
    }

    #[test]
    fn validation_rejects_bad_grids_and_discontinuous_joins() {
        assert!(QuantileFunction::piecewise_linear(vec![0.0, 0.5], vec![0.0, 0.1]).is_err());
        assert!(QuantileFunction::piecewise_linear(vec![0.0, 1.0], vec![0.5, 0.1]).is_err());
        assert!(QuantileFunction::piecewise_linear(vec![0.0, 1.0], vec![0.0]).is_err());
        let broken = QuantileFunction::ExpHead {
            level: 0.6,
            rate: 1.0,
            join: 0.5,
            tail: Box::new(QuantileFunction::identity()),
        };
        assert!(broken.validate().is_err());
    }

    #[test]
    fn integrals_match_numeric_quadrature() {
        let fs = vec![
            example_pl(),
            QuantileFunction::Uniform { lo: 0.2, hi: 0.7 },
            QuantileFunction::PowerTail {
                offset: 0.1,
                scale: 0.6,
                exponent: 1.7,
                join: 0.25,
            },
            QuantileFunction::SaturatingTail {
                offset: 0.05,
                scale: 0.9,
                rate: 3.0,
                join: 0.2,
            },
            QuantileFunction::virtual_of(QuantileFunction::SaturatingTail {
                offset: 0.0,
                scale: 1.0,
                rate: 0.5,
                join: 0.0,
            }),
        ];
        for f in &fs {
            for &(a, b) in &[(0.0, 1.0), (0.13, 0.71), (0.3, 0.3), (0.9, 1.0)] {
                let exact = f.integral(a, b);
                let numeric = f.numeric_integral(a, b);
                assert!((exact - numeric).abs() < 1e-10, "{f:?} on [{a},{b}]: {exact} vs {numeric}");
            }
        }
    }

    #[test]
    fn parametric_slopes_match_finite_differences() {
        let fs = vec![
            QuantileFunction::PowerTail {
                offset: 0.1,
                scale: 0.6,
                exponent: 1.7,
                join: 0.25,
            },
            QuantileFunction::SaturatingTail {
                offset: 0.0,
                scale: 0.8,
                rate: 2.5,
                join: 0.1,
            },
            QuantileFunction::integral_average_of(QuantileFunction::identity()),
        ];
        let h = 1e-6;
        for f in &fs {
            for &q in &[0.3, 0.5, 0.8, 0.95] {
                let fd = (f.at(q + h) - f.at(q - h)) / (2.0 * h);
                assert!((fd - f.slope(q)).abs() < 1e-6, "{f:?} at {q}");
                let fd2 = (f.slope(q + h) - f.slope(q - h)) / (2.0 * h);
                assert!((fd2 - f.curvature(q)).abs() < 1e-4, "{f:?} at {q}");
            }
        }
    }

    #[test]
    fn parametric_cdfs_invert_eval() {
        let tail = QuantileFunction::Uniform { lo: 0.0, hi: 1.0 };
        let fs = vec![
            QuantileFunction::PowerTail {
                offset: 0.1,
                scale: 0.6,
                exponent: 0.7,
                join: 0.25,
            },
            QuantileFunction::SaturatingTail {
                offset: 0.05,
                scale: 0.9,
                rate: 4.0,
                join: 0.0,
            },
            QuantileFunction::ExpHead {
                level: 0.3,
                rate: 1.0 / 0.3,
                join: 0.3,
                tail: Box::new(tail.clone()),
            },
            QuantileFunction::SineHead {
                level: 0.2,
                rate: FRAC_PI_4 / 0.4,
                join: 0.4,
                tail: Box::new(QuantileFunction::Uniform { lo: 0.4, hi: 0.4 }),
            },
            QuantileFunction::integral_average_of(QuantileFunction::identity()),
            QuantileFunction::Affine {
                base: Box::new(tail),
                scale: 1.2,
                shift: -0.1,
            },
        ];
        for f in &fs {
            for k in 0..=50 {
                let q = k as f64 / 50.0;
                let back = f.cdf(f.at(q));
                assert!(back >= q - 1e-9, "{f:?}: cdf(f({q})) = {back}");
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let f = QuantileFunction::ExpHead {
            level: 0.1,
            rate: 2.0,
            join: 0.0,
            tail: Box::new(example_pl()),
        };
        let text = serde_json::to_string(&f).unwrap();
        assert!(text.contains("\"kind\":\"exp_head\""));
        assert!(text.contains("\"join_quantile\""));
        let back: QuantileFunction = serde_json::from_str(&text).unwrap();
        assert_eq!(back, f);
    }
}
