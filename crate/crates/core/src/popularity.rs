//! Zipf-like title popularity.
//!
//! Title `i` (1-based, most popular first) is requested with probability
//! `δ / i^α` for `0 < α < 1`. The normalizer `δ` is computed exactly by
//! summation; the closed-form `(M/N)^(1-α)` shortcut is kept separately as
//! [`ZipfPopularity::cumulative_approx`].

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PopularityError {
    #[error("catalog must contain at least one title")]
    EmptyCatalog,
    #[error("popular title count {popular} must lie in 1..={total}")]
    PopularOutOfRange { popular: u64, total: u64 },
    #[error("skew {0} must satisfy 0 < skew < 1")]
    SkewOutOfRange(f64),
}

/// Serialized form of a popularity model, as it appears in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipfParams {
    pub total_titles: u64,
    pub popular_titles: u64,
    pub skew: f64,
}

/// A Zipf-like popularity law over a catalog of `N` titles, `M` of which
/// are considered popular.
#[derive(Debug, Clone)]
pub struct ZipfPopularity {
    params: ZipfParams,
    normalizer: f64,
    /// `cdf[i - 1] = P(title <= i)`; the last entry is exactly 1.
    cdf: Arc<[f64]>,
}

impl ZipfPopularity {
    pub fn new(total_titles: u64, popular_titles: u64, skew: f64) -> Result<Self, PopularityError> {
        if total_titles == 0 {
            return Err(PopularityError::EmptyCatalog);
        }
        if popular_titles == 0 || popular_titles > total_titles {
            return Err(PopularityError::PopularOutOfRange {
                popular: popular_titles,
                total: total_titles,
            });
        }
        // NaN fails both comparisons and is rejected here too.
        if !(skew > 0.0 && skew < 1.0) {
            return Err(PopularityError::SkewOutOfRange(skew));
        }

        let mut partial = Vec::with_capacity(total_titles as usize);
        let mut sum = NeumaierSum::default();
        for i in 1..=total_titles {
            sum.add((i as f64).powf(-skew));
            partial.push(sum.value());
        }
        let total = sum.value();
        let cdf: Arc<[f64]> = partial.into_iter().map(|s| s / total).collect();

        Ok(Self {
            params: ZipfParams {
                total_titles,
                popular_titles,
                skew,
            },
            normalizer: 1.0 / total,
            cdf,
        })
    }

    pub fn from_params(params: ZipfParams) -> Result<Self, PopularityError> {
        Self::new(params.total_titles, params.popular_titles, params.skew)
    }

    pub fn params(&self) -> ZipfParams {
        self.params
    }

    pub fn total_titles(&self) -> u64 {
        self.params.total_titles
    }

    pub fn popular_titles(&self) -> u64 {
        self.params.popular_titles
    }

    pub fn skew(&self) -> f64 {
        self.params.skew
    }

    /// The exact normalizer `δ = 1 / Σ i^(-α)`.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Probability of requesting title `i`; zero outside `1..=N`.
    pub fn pmf(&self, title: u64) -> f64 {
        if title == 0 || title > self.params.total_titles {
            return 0.0;
        }
        self.normalizer * (title as f64).powf(-self.params.skew)
    }

    /// Probability that a request targets one of the `M` popular titles,
    /// summed exactly over the pmf.
    pub fn cumulative_exact(&self) -> f64 {
        self.cdf[self.params.popular_titles as usize - 1]
    }

    /// Asymptotic shortcut `(M/N)^(1-α)` for the popular-request mass.
    ///
    /// This overestimates the exact sum for small catalogs; for `N = 1000`,
    /// `M = 100`, `α = 0.8` the gap is about 0.105.
    pub fn cumulative_approx(&self) -> f64 {
        let ratio = self.params.popular_titles as f64 / self.params.total_titles as f64;
        ratio.powf(1.0 - self.params.skew)
    }

    /// `1 - (M/N)^(1-α)`, the complement of [`Self::cumulative_approx`].
    pub fn unpopular_request_probability(&self) -> f64 {
        1.0 - self.cumulative_approx()
    }

    pub fn is_popular(&self, title: u64) -> bool {
        title >= 1 && title <= self.params.popular_titles
    }

    /// Draws a title index in `1..=N` by inverting the cumulative table.
    pub fn sample_title<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        // cdf is nondecreasing and ends at 1.0 > u, so the point is in range.
        self.cdf.partition_point(|&c| c <= u) as u64 + 1
    }

    /// Optional class-assignment rule: splits the catalog into `classes`
    /// tiers of roughly equal request mass and returns the 1-based tier of
    /// `title`, so tier 1 holds the most popular titles. Returns `None` for
    /// titles outside `1..=N` or when `classes` is zero.
    pub fn popularity_tier(&self, title: u64, classes: usize) -> Option<usize> {
        if classes == 0 || title == 0 || title > self.params.total_titles {
            return None;
        }
        // Mass strictly before this title decides its tier.
        let before = if title == 1 {
            0.0
        } else {
            self.cdf[title as usize - 2]
        };
        let tier = (before * classes as f64).floor() as usize + 1;
        Some(tier.min(classes))
    }
}

impl PartialEq for ZipfPopularity {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

/// Compensated (Kahan-Babuska-Neumaier) running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}
