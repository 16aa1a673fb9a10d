//! Noise-diversified candidate generation.
//!
//! Each candidate image is generated from the caption embedding plus an
//! isotropic Gaussian perturbation, with its own latent seed. Noise for
//! candidate `i` comes from a ChaCha stream keyed by `noise_seed_base + i`, so
//! any single candidate can be regenerated in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{embed, generate_image, BackendError, EmbedBackend, EmbedPayload, Embedding, T2iBackend};
use crate::model::{CandidateImage, PromptRecord};
use crate::store::BlobStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_candidates: u32,
    pub sigma: f64,
    pub seed_base: u64,
    pub noise_seed_base: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig { n_candidates: 8, sigma: 0.1, seed_base: 0, noise_seed_base: 0 }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.n_candidates < 2 {
            return Err(GenerationError::TooFewCandidates(self.n_candidates));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(GenerationError::BadSigma(self.sigma));
        }
        Ok(())
    }

    /// Latent seed of candidate `index` (1-based).
    pub fn latent_seed(&self, index: u32) -> u64 {
        self.seed_base.wrapping_add(index as u64)
    }

    /// Noise seed of candidate `index` (1-based).
    pub fn noise_seed(&self, index: u32) -> u64 {
        self.noise_seed_base.wrapping_add(index as u64)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("n_candidates = {0}; preference pairs need at least 2")]
    TooFewCandidates(u32),
    #[error("sigma = {0}; must be finite and nonnegative")]
    BadSigma(f64),
    #[error("condition embedding: {0}")]
    Condition(BackendError),
    #[error("{} of {total} candidates failed: {}", failed.len(), failed.iter().map(|(i, e)| format!("#{i}: {e}")).collect::<Vec<_>>().join("; "))]
    Partial { total: u32, succeeded: Vec<CandidateImage>, failed: Vec<(u32, String)> },
}

/// `c + n` with `n ~ N(0, sigma^2 I)` drawn from the stream keyed by `noise_seed`.
pub fn perturb_condition(condition: &Embedding, sigma: f64, noise_seed: u64) -> Result<Embedding, BackendError> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(BackendError::InvalidInput(format!("sigma = {sigma}")));
    }
    if let Some(i) = condition.values().iter().position(|v| !v.is_finite()) {
        return Err(BackendError::InvalidInput(format!("condition value {i} is not finite")));
    }
    if sigma == 0.0 {
        return Ok(condition.clone());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(noise_seed);
    let values = condition
        .values()
        .iter()
        .map(|&c| {
            let n: f64 = StandardNormal.sample(&mut rng);
            c + sigma * n
        })
        .collect();
    Ok(Embedding::from_raw(values))
}

pub fn candidate_id(prompt_id: &str, index: u32) -> String {
    format!("{prompt_id}-c{index}")
}

/// Generate `cfg.n_candidates` images for one prompt and store them.
///
/// The caption is embedded once. The returned list is ordered by candidate
/// index regardless of completion order.
pub fn generate_candidates(
    t2i: &dyn T2iBackend,
    embedder: &dyn EmbedBackend,
    store: &BlobStore,
    prompt: &PromptRecord,
    cfg: &GenerationConfig,
) -> Result<Vec<CandidateImage>, GenerationError> {
    cfg.validate()?;
    let condition = embed(embedder, EmbedPayload::Text(&prompt.text), None).map_err(GenerationError::Condition)?;

    let results: Vec<(u32, Result<CandidateImage, String>)> = (1..=cfg.n_candidates)
        .into_par_iter()
        .map(|i| {
            let r = (|| {
                let perturbed = perturb_condition(&condition, cfg.sigma, cfg.noise_seed(i)).map_err(|e| e.to_string())?;
                let bytes = generate_image(t2i, &perturbed, cfg.latent_seed(i)).map_err(|e| e.to_string())?;
                let image_ref = store.put(&bytes).map_err(|e| e.to_string())?;
                Ok(CandidateImage {
                    candidate_id: candidate_id(&prompt.prompt_id, i),
                    prompt_id: prompt.prompt_id.clone(),
                    seed: cfg.latent_seed(i),
                    noise_sigma: cfg.sigma,
                    image_ref,
                    scores: None,
                    weighted: None,
                })
            })();
            (i, r)
        })
        .collect();

    let mut succeeded = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for (i, r) in results {
        match r {
            Ok(c) => succeeded.push(c),
            Err(e) => failed.push((i, e)),
        }
    }
    if failed.is_empty() {
        Ok(succeeded)
    } else {
        Err(GenerationError::Partial { total: cfg.n_candidates, succeeded, failed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::hash_u64;
    use crate::model::Category;
    use chrono::DateTime;

    fn ones(dim: usize) -> Embedding {
        Embedding::new(vec![0.5; dim]).unwrap()
    }

    struct HashT2i;
    impl T2iBackend for HashT2i {
        fn generate(&self, condition: &Embedding, seed: u64) -> Result<Vec<u8>, BackendError> {
            let bytes: Vec<u8> = condition.values().iter().flat_map(|v| v.to_le_bytes()).collect();
            Ok(hash_u64(&[&bytes, &seed.to_le_bytes()]).to_le_bytes().to_vec())
        }
    }

    struct FlakyT2i;
    impl T2iBackend for FlakyT2i {
        fn generate(&self, _: &Embedding, seed: u64) -> Result<Vec<u8>, BackendError> {
            if seed.is_multiple_of(3) {
                Err(BackendError::Transport { attempts: 1, message: "down".into() })
            } else {
                Ok(seed.to_le_bytes().to_vec())
            }
        }
    }

    struct ConstEmbed;
    impl EmbedBackend for ConstEmbed {
        fn embed(&self, _: EmbedPayload<'_>) -> Result<Embedding, BackendError> {
            Ok(ones(8))
        }
    }

    fn prompt() -> PromptRecord {
        PromptRecord::new("plants-0001", Category::Plants, "a fern", "m", DateTime::UNIX_EPOCH).unwrap()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let c = ones(16);
        for seed in [0, 1, u64::MAX] {
            assert_eq!(perturb_condition(&c, 0.0, seed).unwrap(), c);
        }
    }

    #[test]
    fn perturbation_is_deterministic() {
        let c = ones(32);
        assert_eq!(perturb_condition(&c, 0.1, 5).unwrap(), perturb_condition(&c, 0.1, 5).unwrap());
        assert_ne!(perturb_condition(&c, 0.1, 5).unwrap(), perturb_condition(&c, 0.1, 6).unwrap());
    }

    #[test]
    fn perturbation_moments() {
        let dim = 4096;
        let sigma = 0.1;
        let c = Embedding::new((0..dim).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let out = perturb_condition(&c, sigma, 1234).unwrap();
        let diffs: Vec<f64> = out.values().iter().zip(c.values()).map(|(o, i)| o - i).collect();
        let mean = diffs.iter().sum::<f64>() / dim as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (dim as f64 - 1.0);
        assert!(mean.abs() <= 4.0 * sigma / (dim as f64).sqrt(), "mean {mean}");
        assert!((var.sqrt() - sigma).abs() <= 0.05 * sigma, "std {}", var.sqrt());
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(perturb_condition(&ones(2), -0.1, 0).is_err());
        assert!(perturb_condition(&ones(2), f64::NAN, 0).is_err());
        let bad = Embedding::from_raw(vec![f64::INFINITY]);
        assert!(perturb_condition(&bad, 0.1, 0).is_err());
    }

    #[test]
    fn eight_distinct_candidates() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::open(dir.path()).unwrap();
        let cfg = GenerationConfig { seed_base: 100, noise_seed_base: 200, ..Default::default() };
        let out = generate_candidates(&HashT2i, &ConstEmbed, &store, &prompt(), &cfg).unwrap();
        assert_eq!(out.len(), 8);
        let mut refs: Vec<_> = out.iter().map(|c| c.image_ref.clone()).collect();
        refs.sort();
        refs.dedup();
        assert_eq!(refs.len(), 8);
        assert_eq!(out[0].candidate_id, "plants-0001-c1");
        assert_eq!(out[7].seed, 108);
        assert!(out.iter().all(|c| store.contains(&c.image_ref) && c.noise_sigma == 0.1));

        let again = generate_candidates(&HashT2i, &ConstEmbed, &store, &prompt(), &cfg).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn sigma_zero_pair_differs_only_by_seed() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::open(dir.path()).unwrap();
        let cfg = GenerationConfig { n_candidates: 2, sigma: 0.0, ..Default::default() };
        let out = generate_candidates(&HashT2i, &ConstEmbed, &store, &prompt(), &cfg).unwrap();
        assert_eq!(out.len(), 2);
        assert_ne!(out[0].seed, out[1].seed);
        assert_ne!(out[0].image_ref, out[1].image_ref);
        let direct = HashT2i.generate(&ones(8), out[1].seed).unwrap();
        assert_eq!(crate::model::ImageRef::of_bytes(&direct), out[1].image_ref);
    }

    #[test]
    fn single_candidate_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::open(dir.path()).unwrap();
        let cfg = GenerationConfig { n_candidates: 1, ..Default::default() };
        assert!(matches!(
            generate_candidates(&HashT2i, &ConstEmbed, &store, &prompt(), &cfg),
            Err(GenerationError::TooFewCandidates(1))
        ));
    }

    #[test]
    fn partial_failure_lists_indices() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::open(dir.path()).unwrap();
        let cfg = GenerationConfig { n_candidates: 6, ..Default::default() };
        match generate_candidates(&FlakyT2i, &ConstEmbed, &store, &prompt(), &cfg) {
            Err(GenerationError::Partial { succeeded, failed, total }) => {
                assert_eq!(total, 6);
                assert_eq!(failed.iter().map(|f| f.0).collect::<Vec<_>>(), vec![3, 6]);
                assert_eq!(succeeded.len(), 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
