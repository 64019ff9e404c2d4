//! Robust aggregation of repeated runtime measurements.
//!
//! GPU timings carry outliers large enough to distort a dataset even after
//! clock locking and preheating, so repeated runs are collapsed with a
//! configurable strategy. The comparison experiment (`evaluate_strategies`)
//! draws small samples from a large pool and measures how stable each
//! strategy's output is across draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strategy for collapsing a set of repeated measurements into one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateStrategy {
    Mean,
    Median,
    Min,
    Max,
    /// Mean of the samples left after dropping the lowest and highest 10%
    /// (by count, floored).
    TrimmedMean20,
}

impl AggregateStrategy {
    pub const ALL: [AggregateStrategy; 5] = [
        AggregateStrategy::Mean,
        AggregateStrategy::Median,
        AggregateStrategy::Min,
        AggregateStrategy::Max,
        AggregateStrategy::TrimmedMean20,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AggregateStrategy::Mean => "mean",
            AggregateStrategy::Median => "median",
            AggregateStrategy::Min => "min",
            AggregateStrategy::Max => "max",
            AggregateStrategy::TrimmedMean20 => "trimmed_mean_20",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(AggregateStrategy::Mean),
            "median" => Ok(AggregateStrategy::Median),
            "min" => Ok(AggregateStrategy::Min),
            "max" => Ok(AggregateStrategy::Max),
            "trimmed_mean_20" => Ok(AggregateStrategy::TrimmedMean20),
            other => Err(Error::Config(format!("unknown aggregation strategy: {other}"))),
        }
    }
}

/// Stability of each strategy on a measurement pool: the relative spread
/// (stddev / mean) of the aggregates across repeated random draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub sample_size: usize,
    pub repetitions: usize,
    pub spreads: Vec<StrategySpread>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategySpread {
    pub strategy: String,
    pub relative_spread: f64,
}

impl StabilityReport {
    pub fn spread_of(&self, strategy: AggregateStrategy) -> Option<f64> {
        self.spreads
            .iter()
            .find(|s| s.strategy == strategy.name())
            .map(|s| s.relative_spread)
    }
}

fn check_samples(samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Contract("aggregate over empty sample set".into()));
    }
    if let Some(bad) = samples.iter().find(|v| !v.is_finite() || **v <= 0.0) {
        return Err(Error::Contract(format!(
            "aggregate requires finite positive samples, got {bad}"
        )));
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Collapse a non-empty set of finite positive samples into one value.
pub fn aggregate(samples: &[f64], strategy: AggregateStrategy) -> Result<f64> {
    check_samples(samples)?;
    let value = match strategy {
        AggregateStrategy::Mean => mean(samples),
        AggregateStrategy::Min => samples.iter().cloned().fold(f64::INFINITY, f64::min),
        AggregateStrategy::Max => samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        AggregateStrategy::Median => {
            let mut sorted = samples.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
            median_sorted(&sorted)
        }
        AggregateStrategy::TrimmedMean20 => {
            let mut sorted = samples.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
            let drop = sorted.len() / 10;
            mean(&sorted[drop..sorted.len() - drop])
        }
    };
    Ok(value)
}

fn sample_stddev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Measure how stable each strategy is on a pool of runtimes.
///
/// Draws `reps` samples of `k` pool values without replacement (one seeded
/// draw per repetition, shared across strategies so the comparison is
/// paired), aggregates each draw under every strategy, and reports the
/// relative spread (sample stddev / mean) of the aggregates per strategy.
pub fn evaluate_strategies(
    pool: &[f64],
    k: usize,
    reps: usize,
    seed: u64,
    strategies: &[AggregateStrategy],
) -> Result<StabilityReport> {
    if k == 0 || pool.len() < k {
        return Err(Error::Contract(format!(
            "need 1 <= k <= pool size, got k={k} over pool of {}",
            pool.len()
        )));
    }
    if reps < 2 {
        return Err(Error::Contract(format!("need reps >= 2, got {reps}")));
    }
    check_samples(pool)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aggregates: Vec<Vec<f64>> = vec![Vec::with_capacity(reps); strategies.len()];
    let mut draw = Vec::with_capacity(k);
    for _ in 0..reps {
        draw.clear();
        for idx in rand::seq::index::sample(&mut rng, pool.len(), k) {
            draw.push(pool[idx]);
        }
        for (si, strategy) in strategies.iter().enumerate() {
            aggregates[si].push(aggregate(&draw, *strategy)?);
        }
    }

    let spreads = strategies
        .iter()
        .zip(&aggregates)
        .map(|(strategy, agg)| {
            let m = mean(agg);
            let rel = if m == 0.0 { 0.0 } else { sample_stddev(agg) / m };
            StrategySpread {
                strategy: strategy.name().to_string(),
                relative_spread: rel,
            }
        })
        .collect();

    Ok(StabilityReport {
        sample_size: k,
        repetitions: reps,
        spreads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn median_odd_count() {
        assert_eq!(aggregate(&[1.0, 2.0, 3.0, 4.0, 5.0], AggregateStrategy::Median).unwrap(), 3.0);
    }

    #[test]
    fn median_even_count_is_midpoint() {
        assert_eq!(aggregate(&[1.0, 2.0, 3.0, 4.0], AggregateStrategy::Median).unwrap(), 2.5);
    }

    #[test]
    fn trimmed_mean_drops_tails() {
        let mut samples = vec![1.0; 9];
        samples.push(100.0);
        assert_eq!(aggregate(&samples, AggregateStrategy::TrimmedMean20).unwrap(), 1.0);
    }

    #[test]
    fn trimmed_mean_below_ten_is_plain_mean() {
        let samples = [1.0, 2.0, 3.0];
        assert_eq!(aggregate(&samples, AggregateStrategy::TrimmedMean20).unwrap(), 2.0);
    }

    #[test]
    fn empty_input_is_contract_violation() {
        assert!(aggregate(&[], AggregateStrategy::Mean).is_err());
    }

    #[test]
    fn non_finite_input_is_contract_violation() {
        assert!(aggregate(&[1.0, f64::NAN], AggregateStrategy::Median).is_err());
        assert!(aggregate(&[1.0, f64::INFINITY], AggregateStrategy::Median).is_err());
        assert!(aggregate(&[0.0], AggregateStrategy::Median).is_err());
    }

    #[test]
    fn constant_pool_has_zero_spread() {
        let pool = vec![5.0; 1000];
        let report = evaluate_strategies(&pool, 10, 50, 7, &AggregateStrategy::ALL).unwrap();
        for s in &report.spreads {
            assert_eq!(s.relative_spread, 0.0, "strategy {}", s.strategy);
        }
    }

    #[test]
    fn same_seed_same_report() {
        let pool: Vec<f64> = (1..=200).map(|i| i as f64).collect();
        let a = evaluate_strategies(&pool, 10, 100, 42, &AggregateStrategy::ALL).unwrap();
        let b = evaluate_strategies(&pool, 10, 100, 42, &AggregateStrategy::ALL).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn degenerate_k_rejected() {
        let pool = vec![1.0; 5];
        assert!(evaluate_strategies(&pool, 0, 10, 0, &AggregateStrategy::ALL).is_err());
        assert!(evaluate_strategies(&pool, 6, 10, 0, &AggregateStrategy::ALL).is_err());
        assert!(evaluate_strategies(&pool, 3, 1, 0, &AggregateStrategy::ALL).is_err());
    }

    proptest! {
        // aggregate(c*xs, s) = c*aggregate(xs, s) for c > 0
        #[test]
        fn scale_equivariance(
            xs in proptest::collection::vec(0.001f64..1e6, 1..40),
            c in 0.001f64..1e4,
        ) {
            for strategy in AggregateStrategy::ALL {
                let base = aggregate(&xs, strategy).unwrap();
                let scaled: Vec<f64> = xs.iter().map(|x| x * c).collect();
                let got = aggregate(&scaled, strategy).unwrap();
                prop_assert!((got - c * base).abs() <= 1e-9 * c * base.abs().max(1.0),
                    "strategy {:?}: {} vs {}", strategy, got, c * base);
            }
        }

        // replacing the single largest sample with anything larger leaves the
        // median (n >= 3) and the trimmed mean (n >= 10) unchanged
        #[test]
        fn breakdown_robustness(
            xs in proptest::collection::vec(0.001f64..1e6, 10..40),
            bump in 1.0f64..1e6,
        ) {
            let mut modified = xs.clone();
            let (max_idx, max_val) = modified
                .iter()
                .cloned()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
            modified[max_idx] = max_val + bump;
            for strategy in [AggregateStrategy::Median, AggregateStrategy::TrimmedMean20] {
                let before = aggregate(&xs, strategy).unwrap();
                let after = aggregate(&modified, strategy).unwrap();
                prop_assert_eq!(before, after, "strategy {:?}", strategy);
            }
        }
    }
}
