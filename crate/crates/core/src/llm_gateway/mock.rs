//! Seeded, deterministic stand-in for the judge endpoints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::transport::{ChatTransport, TransportError};
use super::{format_reply, ModelSpec, PromptTemplate};

fn seed_from(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// Replies are a pure function of (seed, model id, prompt), so results do
/// not depend on call order or thread timing. Each task gets a base rating;
/// models mostly agree with it and otherwise drift by one step or answer at
/// random. Motivations reuse the template exemplar with the chosen rating.
pub struct MockTransport {
    seed: u64,
    template: PromptTemplate,
}

impl MockTransport {
    pub fn new(seed: u64, template: PromptTemplate) -> Self {
        Self { seed, template }
    }

    fn task_of(prompt: &str) -> &str {
        prompt.rsplit("\nTask: ").next().unwrap_or(prompt)
    }
}

impl ChatTransport for MockTransport {
    fn complete(&self, spec: &ModelSpec, prompt: &str) -> Result<String, TransportError> {
        let task = Self::task_of(prompt);
        let seed = self.seed.to_le_bytes();
        let mut task_rng = ChaCha8Rng::from_seed(seed_from(&[&seed, task.as_bytes()]));
        let base: i64 = task_rng.random_range(1..=5);
        let mut rng = ChaCha8Rng::from_seed(seed_from(&[&seed, spec.model_id.as_bytes(), task.as_bytes()]));
        let roll: f64 = rng.random();
        let rating = if roll < 0.6 {
            base
        } else if roll < 0.85 {
            let step = if rng.random_bool(0.5) { 1 } else { -1 };
            (base + step).clamp(1, 5)
        } else {
            rng.random_range(1..=5)
        };
        let shot = self
            .template
            .shots()
            .iter()
            .find(|s| s.rating == rating)
            .or_else(|| self.template.shots().first())
            .expect("template has shots");
        let reply = format_reply(rating, &shot.motivation);
        Ok(if rng.random_bool(0.3) {
            format!("Sure! Here is my assessment: {reply}")
        } else {
            reply
        })
    }
}
