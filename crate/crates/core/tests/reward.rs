mod common;

use approx::assert_abs_diff_eq;
use forge_evolve::reward::{
    self, accuracy_reward, keyword_reward, tag_reward, Embedding, RankInfo, SeeInputs,
};
use forge_evolve::{RegionVocab, Verdict};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn emb(v: &[f64]) -> Embedding {
    Embedding::new(v.to_vec())
}

#[test]
fn worked_examples() {
    let above = RankInfo {
        rank: 1,
        label_rank: 3,
        group_size: 4,
    };
    let v = reward::self_evolution_reward(above, 0.8, 0.9, 1.5).unwrap();
    assert_abs_diff_eq!(v, (1.125 + 0.2f64.exp()) * 0.9, epsilon = 1e-12);
    assert_abs_diff_eq!(v, 2.1118, epsilon = 1e-4);

    let below = RankInfo {
        rank: 3,
        label_rank: 2,
        group_size: 4,
    };
    let v = reward::self_evolution_reward(below, 0.3, 1.0, 1.5).unwrap();
    assert_abs_diff_eq!(v, 0.375, epsilon = 1e-12);
}

#[test]
fn geometry_examples() {
    assert_abs_diff_eq!(
        reward::cosine(&emb(&[1.0, 2.0]), &emb(&[2.0, 1.0])).unwrap(),
        0.8,
        epsilon = 1e-12
    );
    let pair = [emb(&[1.0, 0.0]), emb(&[0.0, 1.0])];
    for i in 0..2 {
        assert_abs_diff_eq!(
            reward::dispersion_coefficient(i, &pair).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }
    let trio = [emb(&[1.0, 0.0]), emb(&[1.0, 0.0]), emb(&[0.0, 1.0])];
    assert_abs_diff_eq!(
        reward::dispersion_coefficient(0, &trio).unwrap(),
        2.0 / 3.0,
        epsilon = 1e-12
    );
}

#[test]
fn best_possible_candidate() {
    let vocab = RegionVocab::default();
    let answer: String = common::REGIONS
        .iter()
        .map(|r| format!("{r}: inconsistent. "))
        .collect();
    let raw = format!("<think>look closely</think><answer>{answer}The image is fake.</answer>");
    let see = SeeInputs {
        rank: RankInfo {
            rank: 1,
            label_rank: 2,
            group_size: 4,
        },
        cos_label: 0.9,
        alpha: 0.8,
        beta: reward::DEFAULT_BETA,
    };
    let r = reward::total_reward(&raw, Verdict::Forgery, see, &vocab).unwrap();
    assert_eq!(r.tag, 0.5);
    assert_eq!(r.key, 1.0);
    assert_eq!(r.acc, 1.0);
    assert!(r.see > 0.0);
    assert_abs_diff_eq!(r.total, 2.5 + r.see, epsilon = 1e-12);
}

#[test]
fn every_component_is_non_negative_at_the_bottom_rank() {
    let info = RankInfo {
        rank: 5,
        label_rank: 1,
        group_size: 4,
    };
    assert_eq!(
        reward::self_evolution_reward(info, 0.0, 1.0, 1.5).unwrap(),
        0.0
    );
}

#[test]
fn invalid_ranks_are_rejected() {
    for (rank, label_rank, group_size) in [(0, 1, 4), (6, 1, 4), (2, 2, 4), (1, 2, 0)] {
        let info = RankInfo {
            rank,
            label_rank,
            group_size,
        };
        assert!(reward::self_evolution_reward(info, 0.5, 0.5, 1.5).is_err());
    }
}

#[test]
fn scalar_rewards_match_oracle_on_generated_text() {
    let vocab = RegionVocab::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let raw = common::candidate(&mut rng);
        assert_eq!(tag_reward(&raw), common::tag(&raw), "{raw}");
        assert_eq!(keyword_reward(&raw, &vocab), common::key(&raw), "{raw}");
        for label in [Verdict::Forgery, Verdict::Real] {
            assert_eq!(
                accuracy_reward(reward::classify(&raw), label),
                common::acc(&raw, label == Verdict::Forgery),
                "{raw}"
            );
        }
    }
}

proptest! {
    #[test]
    fn engine_matches_straight_line_oracle(seed in any::<u64>(), m in 2usize..10, dim in 2usize..12) {
        let vocab = RegionVocab::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = common::candidate(&mut rng);
        let label = if rng.gen_bool(0.5) { Verdict::Forgery } else { Verdict::Real };
        let group: Vec<Vec<f64>> = (0..m).map(|_| common::vector(&mut rng, dim)).collect();
        let label_vec = common::vector(&mut rng, dim);
        let i = rng.gen_range(0..m);
        let rank = rng.gen_range(1..=m + 1);
        let label_rank = loop {
            let r = rng.gen_range(1..=m + 1);
            if r != rank {
                break r;
            }
        };
        let beta = rng.gen_range(0.1..3.0);

        let embeddings: Vec<Embedding> = group.iter().map(|v| emb(v)).collect();
        let alpha = reward::dispersion_coefficient(i, &embeddings).unwrap();
        let cos_label = reward::cosine(&embeddings[i], &emb(&label_vec)).unwrap();
        prop_assert!((alpha - common::alpha(i, &group)).abs() <= 1e-12);
        prop_assert!((cos_label - common::cosine(&group[i], &label_vec)).abs() <= 1e-12);

        let see = SeeInputs {
            rank: RankInfo { rank, label_rank, group_size: m },
            cos_label,
            alpha,
            beta,
        };
        let got = reward::total_reward(&raw, label, see, &vocab).unwrap();
        let expected_see = common::see(rank, label_rank, m, cos_label, alpha, beta);
        let expected = common::tag(&raw) + common::key(&raw)
            + common::acc(&raw, label == Verdict::Forgery) + expected_see;
        prop_assert!((got.see - expected_see).abs() <= 1e-12);
        prop_assert!((got.total - expected).abs() <= 1e-12);
        prop_assert!(got.tag >= 0.0 && got.key >= 0.0 && got.acc >= 0.0 && got.see >= 0.0);
    }
}
