//! Globally adaptive 15-point Gauss–Kronrod quadrature on finite intervals.
//!
//! The interval with the largest error estimate is bisected until the total
//! error falls below `max(abs_tol, rel_tol·|I|)` or the subinterval cap is
//! reached. The final sum is taken pairwise over subintervals ordered by
//! position, so the result does not depend on refinement order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

pub const DEFAULT_REL_TOL: f64 = 1e-10;
pub const MAX_SUBINTERVALS: usize = 1 << 20;

// Kronrod abscissae on [0, 1] (symmetric), with the 7-point Gauss weights on
// the odd-indexed nodes.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_subintervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel: DEFAULT_REL_TOL,
            abs: 1e-15,
            max_subintervals: MAX_SUBINTERVALS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub subintervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.lo.total_cmp(&self.lo))
    }
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Segment {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kron += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let value = kron * half;
    let error = ((kron - gauss) * half).abs();
    Segment {
        lo,
        hi,
        value,
        error,
    }
}

fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 8 => v.iter().sum(),
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Integrates `f` over `[lo, hi]`. A non-finite integrand value anywhere in
/// the sampled nodes is reported as non-convergence.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: Tolerance) -> Result<Estimate> {
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::NonFinite("integration limits"));
    }
    if lo == hi {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
            subintervals: 1,
        });
    }
    if lo > hi {
        let e = integrate(f, hi, lo, tol)?;
        return Ok(Estimate {
            value: -e.value,
            ..e
        });
    }

    let first = kronrod(&f, lo, hi);
    let mut total = first.value;
    let mut total_err = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);

    let fail = |value: f64, error: f64| Error::Quadrature {
        lo,
        hi,
        estimate: value,
        error,
    };

    loop {
        if !(total.is_finite() && total_err.is_finite()) {
            return Err(fail(total, total_err));
        }
        if total_err <= tol.abs.max(tol.rel * total.abs()) {
            break;
        }
        if heap.len() >= tol.max_subintervals {
            return Err(fail(total, total_err));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.lo + worst.hi);
        if !(worst.lo < mid && mid < worst.hi) {
            // interval can no longer be split in floating point
            return Err(fail(total, total_err));
        }
        let left = kronrod(&f, worst.lo, mid);
        let right = kronrod(&f, mid, worst.hi);
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }

    let mut segs = heap.into_vec();
    segs.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let values: Vec<f64> = segs.iter().map(|s| s.value).collect();
    let errors: Vec<f64> = segs.iter().map(|s| s.error).collect();
    Ok(Estimate {
        value: pairwise_sum(&values),
        error: pairwise_sum(&errors),
        subintervals: segs.len(),
    })
}

/// Integrates with the default tolerance.
pub fn integrate_default<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> Result<f64> {
    integrate(f, lo, hi, Tolerance::default()).map(|e| e.value)
}
