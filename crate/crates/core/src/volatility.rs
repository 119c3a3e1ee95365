//! Batch min/max-variance estimation of the ambiguity interval from
//! i.i.d. observations.

use log::{info, warn};

use crate::error::{Error, Result};
use crate::model::AmbiguityBounds;

/// Observations together with the batch layout `m × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchedSamples {
    data: Vec<f64>,
    batches: usize,
    batch_size: usize,
}

impl BatchedSamples {
    /// Requires `m >= 2`, `n >= 2`, `m·n <= data.len()` and finite data.
    /// Observations beyond `m·n` are kept but ignored by the estimator.
    pub fn new(data: Vec<f64>, batches: usize, batch_size: usize) -> Result<Self> {
        if batches < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 batches, got {batches}"
            )));
        }
        if batch_size < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 observations per batch, got {batch_size}"
            )));
        }
        let needed = batches
            .checked_mul(batch_size)
            .ok_or_else(|| Error::InvalidParameter("m·n overflows".into()))?;
        if needed > data.len() {
            return Err(Error::InvalidParameter(format!(
                "{batches} batches of {batch_size} need {needed} observations, have {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "observation {pos} is not finite"
            )));
        }
        Ok(Self {
            data,
            batches,
            batch_size,
        })
    }

    /// Uses the largest batch size that fits `m` batches into the data.
    pub fn with_batches(data: Vec<f64>, batches: usize) -> Result<Self> {
        let n = data.len().checked_div(batches).unwrap_or(0);
        Self::new(data, batches, n)
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Number of trailing observations not covered by any batch.
    pub fn discarded(&self) -> usize {
        self.data.len() - self.batches * self.batch_size
    }

    pub fn iter_batches(&self) -> impl Iterator<Item = &[f64]> {
        self.data[..self.batches * self.batch_size].chunks_exact(self.batch_size)
    }
}

/// Result of [`estimate_bounds`]. The interval is returned as-is even when
/// the lower end is zero; `degenerate_lower` flags that case.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsEstimate {
    pub lower: f64,
    pub upper: f64,
    pub batch_variances: Vec<f64>,
    pub discarded: usize,
    pub degenerate_lower: bool,
}

impl BoundsEstimate {
    /// Converts to validated bounds; fails on a degenerate lower end.
    pub fn to_bounds(&self) -> Result<AmbiguityBounds> {
        AmbiguityBounds::new(self.lower, self.upper)
    }
}

/// Variance with divisor `n`: `(1/n) Σ (x - μ)²`.
pub fn batch_variance(batch: &[f64]) -> Result<f64> {
    if batch.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "batch variance needs at least 2 observations, got {}",
            batch.len()
        )));
    }
    let n = batch.len() as f64;
    let mean = batch.iter().sum::<f64>() / n;
    Ok(batch.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n)
}

/// Minimum and maximum of the per-batch variances.
pub fn estimate_bounds(s: &BatchedSamples) -> Result<BoundsEstimate> {
    let discarded = s.discarded();
    if discarded > 0 {
        info!("discarding {discarded} trailing observations beyond m·n");
    }
    let batch_variances = s
        .iter_batches()
        .map(batch_variance)
        .collect::<Result<Vec<_>>>()?;
    let lower = batch_variances
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let upper = batch_variances
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let degenerate_lower = lower <= 0.0;
    if degenerate_lower {
        warn!("estimated lower variance is {lower}; data contains a constant batch");
    }
    Ok(BoundsEstimate {
        lower,
        upper,
        batch_variances,
        discarded,
        degenerate_lower,
    })
}

/// Parses newline-separated reals. Blank lines and lines starting with `#`
/// are skipped; anything else that is not a finite number is an error.
pub fn parse_samples(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v: f64 = t.parse().map_err(|_| Error::Parse {
            line: idx + 1,
            msg: format!("not a number: {t:?}"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("non-finite value {t:?}"),
            });
        }
        out.push(v);
    }
    Ok(out)
}

/// Parses raw bytes, rejecting invalid UTF-8.
pub fn parse_samples_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("invalid utf-8: {e}"),
    })?;
    parse_samples(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn batch_variance_examples() {
        assert_eq!(batch_variance(&[3.5; 4]).unwrap(), 0.0);
        assert_eq!(batch_variance(&[-1.0, 1.0, -1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(batch_variance(&[0.0, 2.0]).unwrap(), 1.0);
        assert!(batch_variance(&[1.0]).is_err());
        assert!(batch_variance(&[]).is_err());
    }

    #[test]
    fn constant_batch_is_flagged() {
        let data = vec![0.0, 0.0, 0.0, 0.0, -1.0, 1.0, -1.0, 1.0];
        let s = BatchedSamples::new(data, 2, 4).unwrap();
        let e = estimate_bounds(&s).unwrap();
        assert_eq!((e.lower, e.upper), (0.0, 1.0));
        assert!(e.degenerate_lower);
        assert!(e.to_bounds().is_err());
    }

    #[test]
    fn identical_batches_collapse() {
        let batch = [1.0, 3.0, 2.0, 6.0];
        let v = batch_variance(&batch).unwrap();
        let data: Vec<f64> = batch.iter().copied().cycle().take(12).collect();
        let e = estimate_bounds(&BatchedSamples::new(data, 3, 4).unwrap()).unwrap();
        assert_eq!((e.lower, e.upper), (v, v));
        assert!(!e.degenerate_lower);
    }

    #[test]
    fn trailing_observations_are_discarded() {
        let data = vec![0.0, 2.0, 0.0, 4.0, 99.0];
        let s = BatchedSamples::new(data, 2, 2).unwrap();
        assert_eq!(s.discarded(), 1);
        let e = estimate_bounds(&s).unwrap();
        assert_eq!((e.lower, e.upper), (1.0, 4.0));
        assert_eq!(e.discarded, 1);
    }

    #[test]
    fn layout_invariants_enforced() {
        assert!(BatchedSamples::new(vec![0.0; 10], 1, 5).is_err());
        assert!(BatchedSamples::new(vec![0.0; 10], 5, 1).is_err());
        assert!(BatchedSamples::new(vec![0.0; 10], 3, 4).is_err());
        assert!(BatchedSamples::new(vec![0.0, f64::NAN, 1.0, 2.0], 2, 2).is_err());
        assert!(BatchedSamples::with_batches(vec![0.0; 10], 0).is_err());
        assert_eq!(
            BatchedSamples::with_batches(vec![0.0; 11], 3)
                .unwrap()
                .batch_size(),
            3
        );
    }

    #[test]
    fn standard_normal_batches_bracket_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(20240917);
        let data: Vec<f64> = (0..10_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let e = estimate_bounds(&BatchedSamples::new(data, 10, 1000).unwrap()).unwrap();
        assert!(e.lower <= 1.0 && 1.0 <= e.upper, "{e:?}");
        assert!(e.upper - e.lower < 0.3, "{e:?}");
    }

    #[test]
    fn width_shrinks_with_batch_size() {
        // averaged over a few seeds to keep the comparison stable
        let width = |n: usize| {
            (0..5u64)
                .map(|seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let data: Vec<f64> = (0..10 * n)
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect();
                    let e = estimate_bounds(&BatchedSamples::new(data, 10, n).unwrap()).unwrap();
                    e.upper - e.lower
                })
                .sum::<f64>()
                / 5.0
        };
        let (w100, w1000, w10000) = (width(100), width(1000), width(10_000));
        assert!(w100 > w1000 && w1000 > w10000, "{w100} {w1000} {w10000}");
    }

    #[test]
    fn parse_accepts_comments_and_rejects_garbage() {
        assert_eq!(
            parse_samples("# header\n1.5\n\n -2e-3 \n").unwrap(),
            vec![1.5, -2e-3]
        );
        assert_eq!(
            parse_samples("1\nabc\n"),
            Err(Error::Parse {
                line: 2,
                msg: "not a number: \"abc\"".into()
            })
        );
        assert!(parse_samples("inf\n").is_err());
        assert!(parse_samples_bytes(&[0xff, 0xfe]).is_err());
    }

    proptest! {
        #[test]
        fn lower_never_exceeds_upper(data in prop::collection::vec(-1e3f64..1e3, 4..200), m in 2usize..6) {
            prop_assume!(data.len() >= 2 * m);
            let e = estimate_bounds(&BatchedSamples::with_batches(data, m).unwrap()).unwrap();
            prop_assert!(e.lower <= e.upper);
            prop_assert!(e.lower >= 0.0);
        }

        #[test]
        fn permutation_invariance(
            data in prop::collection::vec(-10.0f64..10.0, 24),
            rot in 0usize..6,
            shift in 0usize..4,
        ) {
            let base = estimate_bounds(&BatchedSamples::new(data.clone(), 4, 6).unwrap()).unwrap();
            // rotate inside every batch, then rotate whole batches
            let mut batches: Vec<Vec<f64>> = data.chunks(6).map(|c| {
                let mut c = c.to_vec();
                c.rotate_left(rot);
                c
            }).collect();
            batches.rotate_left(shift);
            let permuted: Vec<f64> = batches.concat();
            let e = estimate_bounds(&BatchedSamples::new(permuted, 4, 6).unwrap()).unwrap();
            prop_assert!((e.lower - base.lower).abs() <= 1e-12 * (1.0 + base.lower));
            prop_assert!((e.upper - base.upper).abs() <= 1e-12 * (1.0 + base.upper));
        }

        #[test]
        fn parser_never_panics(s in ".*") {
            let _ = parse_samples(&s);
        }
    }
}
