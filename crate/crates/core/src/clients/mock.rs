//! Deterministic in-process stand-ins for the external models.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    stable_hash, ClientError, EmbedClient, EmbedRequest, EmbedResponse, PolicyClient, RankRequest,
    RankResponse, SampleRequest, SampleResponse, TeacherClient,
};

pub const DEFAULT_EMBED_DIM: usize = 256;
const NGRAM: usize = 3;

/// Signed character-trigram feature hashing, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(DEFAULT_EMBED_DIM)
    }
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let chars: Vec<char> = text.chars().collect();
        let mut v = vec![0.0; self.dim];
        let mut first_bucket = None;
        let mut buf = String::new();
        let grams = chars.len().saturating_sub(NGRAM - 1).max(1);
        for start in 0..grams {
            buf.clear();
            buf.extend(chars.iter().skip(start).take(NGRAM));
            let h = stable_hash(&[buf.as_bytes()]);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
            first_bucket.get_or_insert(bucket);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Every gram cancelled out; fall back to a deterministic unit vector.
            v[first_bucket.unwrap_or(0)] = 1.0;
            return v;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl EmbedClient for HashingEmbedder {
    fn embed(&self, request: &EmbedRequest) -> Result<EmbedResponse, ClientError> {
        if let Some(index) = request.texts.iter().position(|t| t.is_empty()) {
            return Err(ClientError::EmptyText { index });
        }
        Ok(EmbedResponse {
            vectors: request.texts.iter().map(|t| self.embed_text(t)).collect(),
        })
    }
}

/// Draws candidates from a fixed pool; the draw is a pure function of the
/// configured seed and the request.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pool: Vec<String>,
    seed: u64,
}

impl ScriptedPolicy {
    pub fn new(pool: Vec<String>, seed: u64) -> Result<Self, ClientError> {
        if pool.is_empty() {
            return Err(ClientError::Config("scripted policy pool is empty".into()));
        }
        Ok(ScriptedPolicy { pool, seed })
    }

    pub fn pool(&self) -> &[String] {
        &self.pool
    }

    fn rng_for(&self, request: &SampleRequest) -> ChaCha8Rng {
        let seed = stable_hash(&[
            &self.seed.to_le_bytes(),
            &request.seed.unwrap_or(0).to_le_bytes(),
            request.prompt.as_bytes(),
            request.image_ref.as_bytes(),
            request.previous_answer.as_bytes(),
            &(request.n as u64).to_le_bytes(),
        ]);
        ChaCha8Rng::seed_from_u64(seed)
    }
}

impl PolicyClient for ScriptedPolicy {
    fn sample(&self, request: &SampleRequest) -> Result<SampleResponse, ClientError> {
        if request.n == 0 {
            return Err(ClientError::InvalidRequest("n must be at least 1".into()));
        }
        let mut rng = self.rng_for(request);
        let candidates = if request.n <= self.pool.len() {
            index::sample(&mut rng, self.pool.len(), request.n)
                .into_iter()
                .map(|i| self.pool[i].clone())
                .collect()
        } else {
            (0..request.n)
                .map(|_| self.pool[rng.gen_range(0..self.pool.len())].clone())
                .collect()
        };
        Ok(SampleResponse { candidates })
    }
}

/// Ranks items by descending cosine between their hashed embedding and a
/// hidden target text. Ties keep the lower item index first.
#[derive(Debug, Clone)]
pub struct CosineTeacher {
    target: Vec<f64>,
    embedder: HashingEmbedder,
}

impl CosineTeacher {
    pub fn new(target: impl AsRef<str>, embedder: HashingEmbedder) -> Self {
        CosineTeacher {
            target: embedder.embed_text(target.as_ref()),
            embedder,
        }
    }

    /// Alignment score of one text with the hidden target.
    pub fn score(&self, text: &str) -> f64 {
        if text.is_empty() {
            return -1.0;
        }
        // Both vectors are unit length.
        self.embedder
            .embed_text(text)
            .iter()
            .zip(&self.target)
            .map(|(a, b)| a * b)
            .sum()
    }
}

impl TeacherClient for CosineTeacher {
    fn rank(&self, request: &RankRequest) -> Result<RankResponse, ClientError> {
        if request.items.len() < 2 {
            return Err(ClientError::InvalidRequest(
                "ranking needs at least two items".into(),
            ));
        }
        let scores: Vec<f64> = request.items.iter().map(|t| self.score(t)).collect();
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(RankResponse {
            order,
            scores: Some(scores),
        })
    }
}

pub const DEFAULT_TEACHER_TARGET: &str = "<think>The skin on the cheeks is unnaturally smooth \
and the blending boundary along the jaw shows a faint seam. Lighting on the nose does not \
match the forehead, and the eye reflections are inconsistent.</think><answer>Overall image: \
lighting is inconsistent between the face and the background. Face: a blending seam runs \
along the jawline. Eyes: the specular highlights differ between the two eyes. Eyebrows: \
texture is blurred compared with the hair. Nose: shading does not follow the light source. \
Mouth: teeth are smeared. Skin: pores are missing and the texture is over-smoothed. Neck: \
the color tone differs from the face. The image is fake.</answer>";

pub const DEFAULT_POLICY_POOL: [&str; 10] = [
    "<think>The cheeks look over-smoothed and the jaw has a seam.</think><answer>Overall \
image: lighting is slightly inconsistent. Face: a blending seam runs along the jawline. \
Skin: texture is over-smoothed. The image is fake.</answer>",
    "<think>Nothing unusual in the lighting or texture.</think><answer>Overall image: \
consistent lighting. Face: natural proportions. Skin: visible pores. The image is \
real.</answer>",
    "<think>The eye highlights differ and the teeth are smeared.</think><answer>Eyes: the \
specular highlights differ between the two eyes. Mouth: teeth are smeared. The image is \
fake.</answer>",
    "<think>The skin on the cheeks is unnaturally smooth and the blending boundary along the \
jaw shows a seam.</think><answer>Overall image: lighting is inconsistent between the face \
and the background. Face: a blending seam runs along the jawline. Eyes: highlights differ. \
Nose: shading does not follow the light. Skin: pores are missing. Neck: tone differs from \
the face. The image is fake.</answer>",
    "The image is probably fake because the face looks odd.",
    "<think>Eyebrows look painted.</think><answer>Eyebrows: texture is blurred. The image is \
manipulated.</answer>",
    "<think>Hard to tell.<answer>maybe real</answer></think>",
    "<think>The neck and face tones match and the hair is sharp.</think><answer>Neck: tone \
matches the face. Face: no blending seam. The image is authentic.</answer>",
    "<think>Compression noise only.</think><answer>Overall image: heavy compression. The \
image is not fake.</answer>",
    "<think>The skin is smooth and the nose shading is off.</think><answer>Face: the jawline \
has a seam. Nose: shading does not follow the light source. Skin: over-smoothed texture. \
Mouth: teeth are smeared. The image is fake.</answer>",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_request(n: usize, seed: Option<u64>) -> SampleRequest {
        SampleRequest {
            prompt: "Does the image look fake?".into(),
            image_ref: "a.png".into(),
            extra_info_ref: None,
            previous_answer: "prev".into(),
            n,
            seed,
            image_data: None,
        }
    }

    #[test]
    fn hashing_is_unit_norm_and_deterministic() {
        let e = HashingEmbedder::default();
        for text in ["a", "ab", "abc", "The image is fake.", "ümlaut ñ 漢字"] {
            let v = e.embed_text(text);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "{text}: {norm}");
            assert_eq!(v, e.embed_text(text));
        }
    }

    #[test]
    fn scripted_policy_is_deterministic() {
        let p = ScriptedPolicy::new(
            DEFAULT_POLICY_POOL.iter().map(|s| s.to_string()).collect(),
            7,
        )
        .unwrap();
        let a = p.sample(&sample_request(3, Some(1))).unwrap();
        let b = p.sample(&sample_request(3, Some(1))).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.candidates.len(), 3);
        let many = p.sample(&sample_request(25, Some(1))).unwrap();
        assert_eq!(many.candidates.len(), 25);
    }

    #[test]
    fn teacher_prefers_target() {
        let t = CosineTeacher::new("the target text", HashingEmbedder::default());
        let r = t
            .rank(&RankRequest {
                image_ref: "x".into(),
                items: vec!["the target text".into(), "zzz qqq".into()],
                image_data: None,
            })
            .unwrap();
        assert_eq!(r.order, vec![0, 1]);
    }
}
