//! Local hypothesis generation: each homography is fit to a seed match and
//! three matches drawn from its spatial neighbourhood in image 1.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{estimate_homography_subset, Correspondence, Homography};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("need at least {required} matches to sample hypotheses, got {got}")]
    InsufficientMatches { required: usize, got: usize },
    #[error("{failed} of {total} minimal samples were degenerate")]
    ExcessiveDegeneracy { failed: usize, total: usize },
    #[error("invalid sampling config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Number of hypotheses to generate.
    pub m: usize,
    /// Size of the candidate pool around each seed match.
    pub neighborhood_k: usize,
    pub minimal_sample: usize,
    pub seed: u64,
    /// Width of the Gaussian locality kernel, pixels.
    pub sigma_spatial: f64,
    /// Redraws allowed per hypothesis after degenerate samples.
    pub max_retries: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            m: 500,
            neighborhood_k: 30,
            minimal_sample: 4,
            seed: 0,
            sigma_spatial: 50.0,
            max_retries: 10,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.m < 1 {
            return Err(SamplingError::InvalidConfig("m must be at least 1"));
        }
        if self.minimal_sample != 4 {
            return Err(SamplingError::InvalidConfig(
                "minimal_sample must be 4 for homographies",
            ));
        }
        if self.neighborhood_k < self.minimal_sample {
            return Err(SamplingError::InvalidConfig("neighborhood_k must be >= minimal_sample"));
        }
        if !(self.sigma_spatial > 0.0) {
            return Err(SamplingError::InvalidConfig("sigma_spatial must be positive"));
        }
        Ok(())
    }
}

/// A sampled homography together with the match indices it was fit to.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub homography: Homography,
    pub sample: [usize; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisSet {
    pub hypotheses: Vec<Hypothesis>,
    pub failed_draws: usize,
    /// Hypotheses that could not be produced within the retry budget.
    pub shortfall: usize,
}

impl HypothesisSet {
    pub fn homographies(&self) -> Vec<Homography> {
        self.hypotheses.iter().map(|h| h.homography).collect()
    }
}

fn draw_sample(matches: &[Correspondence], cfg: &SamplingConfig, rng: &mut ChaCha8Rng) -> [usize; 4] {
    let n = matches.len();
    let seed = rng.random_range(0..n);
    let origin = matches[seed].x;

    let mut pool: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != seed)
        .map(|j| ((matches[j].x - origin).norm_squared(), j))
        .collect();
    let k = cfg.neighborhood_k.min(pool.len());
    if k < pool.len() {
        pool.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        pool.truncate(k);
    }
    pool.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let sigma2 = cfg.sigma_spatial * cfg.sigma_spatial;
    let mut weights: Vec<f64> = pool.iter().map(|(d2, _)| (-d2 / sigma2).exp()).collect();
    let mut sample = [seed; 4];
    for slot in sample.iter_mut().skip(1) {
        let pick = match WeightedIndex::new(&weights) {
            Ok(dist) => dist.sample(rng),
            // Every remaining weight underflowed: fall back to uniform over the rest.
            Err(_) => {
                let remaining: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] >= 0.0).collect();
                remaining[rng.random_range(0..remaining.len())]
            }
        };
        *slot = pool[pick].1;
        // Negative marks "taken" for the uniform fallback; zero excludes it from WeightedIndex.
        weights[pick] = -0.0;
        if weights.iter().all(|&w| w == 0.0) {
            for (w, (d2, _)) in weights.iter_mut().zip(&pool) {
                if w.is_sign_positive() {
                    *w = (-d2 / sigma2).exp();
                }
            }
        }
    }
    sample
}

/// Generates `cfg.m` locally sampled homography hypotheses.
///
/// Each hypothesis uses its own RNG stream derived from `cfg.seed` and its
/// index, so the output is identical regardless of thread scheduling.
pub fn sample_local_hypotheses(
    matches: &[Correspondence],
    cfg: &SamplingConfig,
) -> Result<HypothesisSet, SamplingError> {
    cfg.validate()?;
    if matches.len() < cfg.minimal_sample {
        return Err(SamplingError::InsufficientMatches {
            required: cfg.minimal_sample,
            got: matches.len(),
        });
    }

    let results: Vec<(Option<Hypothesis>, usize)> = (0..cfg.m)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(index as u64);
            let mut failed = 0;
            for _ in 0..=cfg.max_retries {
                let sample = draw_sample(matches, cfg, &mut rng);
                match estimate_homography_subset(matches, &sample) {
                    Ok(homography) => return (Some(Hypothesis { homography, sample }), failed),
                    Err(_) => failed += 1,
                }
            }
            (None, failed)
        })
        .collect();

    let failed_draws: usize = results.iter().map(|r| r.1).sum();
    let total = failed_draws + results.iter().filter(|r| r.0.is_some()).count();
    if 2 * failed_draws > total {
        return Err(SamplingError::ExcessiveDegeneracy {
            failed: failed_draws,
            total,
        });
    }
    let hypotheses: Vec<Hypothesis> = results.into_iter().filter_map(|r| r.0).collect();
    let shortfall = cfg.m - hypotheses.len();
    if shortfall > 0 {
        log::warn!("{shortfall} hypotheses could not be sampled without degeneracy");
    }
    Ok(HypothesisSet {
        hypotheses,
        failed_draws,
        shortfall,
    })
}
