use std::path::Path;

use forge_evolve::fvce::{
    self, IdentityRestorer, ImagePlane, LowPassRestorer, PrecomputedRestorer,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_plane(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> ImagePlane {
    let data = (0..h * w * c).map(|_| rng.gen_range(0.0..1.0)).collect();
    ImagePlane::new(h, w, c, data).unwrap()
}

fn energy(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum()
}

#[test]
fn parseval_holds_on_random_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let backend = LowPassRestorer::default();
    for _ in 0..20 {
        let image = random_plane(&mut rng, 64, 64, 3);
        let clues = fvce::extract_clues(&image, &backend, None, 5, 2).unwrap();
        for (d, spectra) in clues.differences.iter().zip(&clues.frequencies.raw) {
            for (c, spectrum) in spectra.iter().enumerate() {
                let spatial = energy(d.channel(c));
                let spectral = spectrum.iter().map(|z| z.norm_sqr()).sum::<f64>() / (64.0 * 64.0);
                assert!((spatial - spectral).abs() <= 1e-6 * spatial.max(1e-300));
            }
        }
    }
}

#[test]
fn delta_has_flat_spectrum() {
    let d = ImagePlane::new(2, 2, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let f = fvce::frequency_stack(&[d]);
    assert!(f.raw[0][0].iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    assert!(f.planes[0]
        .data()
        .iter()
        .all(|v| (v - 2f64.ln()).abs() < 1e-12));
}

#[test]
fn identity_restorer_gives_zero_clues() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let image = random_plane(&mut rng, 9, 7, 3);
    let clues = fvce::extract_clues(&image, &IdentityRestorer, None, 4, 3).unwrap();
    assert_eq!(clues.extra_info.shape(), (9, 7, 6));
    assert!(clues.extra_info.data().iter().all(|v| *v == 0.0));
}

#[test]
fn extra_info_matches_accumulation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (h, w, c) = (5, 6, 2);
    let image = random_plane(&mut rng, h, w, c);
    let restorations: Vec<ImagePlane> = (0..3).map(|_| random_plane(&mut rng, h, w, c)).collect();
    let diffs = fvce::difference_stack(&image, &restorations, 2).unwrap();
    let freqs = fvce::frequency_stack(&diffs);
    let extra = fvce::build_extra_info(&freqs.planes, &diffs).unwrap();

    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut f_sum = 0.0;
                let mut d_sum = 0.0;
                for (n, r) in restorations.iter().enumerate() {
                    d_sum += image.get(ch, y, x) - r.get(ch, y, x);
                    f_sum += freqs.planes[n].get(ch, y, x);
                }
                assert!((extra.get(ch, y, x) - f_sum).abs() <= 1e-12);
                assert!((extra.get(c + ch, y, x) - d_sum).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn difference_needs_enough_restorations() {
    let image = ImagePlane::zeros(2, 2, 1);
    let restorations = vec![ImagePlane::zeros(2, 2, 1); 2];
    assert!(matches!(
        fvce::difference_stack(&image, &restorations, 2),
        Err(fvce::FvceError::IndexOutOfRange {
            needed: 3,
            available: 2
        })
    ));
}

#[test]
fn low_pass_residual_shrinks_with_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let image = random_plane(&mut rng, 32, 24, 3);
    let restorations =
        fvce::restore_sequence(&image, &LowPassRestorer::default(), None, 6).unwrap();
    let norms: Vec<f64> = restorations
        .iter()
        .map(|r| {
            let d: Vec<f64> = image
                .data()
                .iter()
                .zip(r.data())
                .map(|(a, b)| a - b)
                .collect();
            energy(&d).sqrt()
        })
        .collect();
    assert!(norms.windows(2).all(|w| w[1] <= w[0]), "{norms:?}");
}

#[test]
fn precomputed_restorations_are_read_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let save = |path: &Path, v: u8| {
        image::RgbImage::from_pixel(4, 3, image::Rgb([v, v, v]))
            .save(path)
            .unwrap();
    };
    let source = dir.path().join("face.png");
    save(&source, 200);
    for n in 1..=3 {
        save(
            &PrecomputedRestorer::restoration_path(dir.path(), "face", n),
            200 - 50 * n as u8,
        );
    }
    let image = ImagePlane::load(&source).unwrap();
    let backend = PrecomputedRestorer { dir: None };
    let clues = fvce::extract_clues(&image, &backend, Some(&source), 3, 1).unwrap();
    let expected = [100.0 / 255.0, 150.0 / 255.0];
    for (d, e) in clues.differences.iter().zip(expected) {
        assert!(d.data().iter().all(|v| (v - e).abs() < 1e-9));
    }

    std::fs::remove_file(PrecomputedRestorer::restoration_path(dir.path(), "face", 2)).unwrap();
    assert!(fvce::extract_clues(&image, &backend, Some(&source), 3, 1).is_err());
}

proptest! {
    #[test]
    fn differences_are_linear_in_scale(seed in any::<u64>(), k in 0.1f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = random_plane(&mut rng, 8, 8, 1);
        let backend = LowPassRestorer::default();
        let base = fvce::extract_clues(&image, &backend, None, 3, 1).unwrap();
        let scaled = fvce::extract_clues(&image.scale(k), &backend, None, 3, 1).unwrap();
        for (a, b) in base.differences.iter().zip(&scaled.differences) {
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x * k - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn container_round_trips(seed in any::<u64>(), h in 1usize..9, w in 1usize..9, c in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plane = random_plane(&mut rng, h, w, c);
        let bytes = fvce::encode_container(&plane).unwrap();
        prop_assert_eq!(bytes.len(), fvce::CONTAINER_HEADER_LEN + 4 * h * w * c);
        let back = fvce::read_container(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(back.shape(), plane.shape());
        for (x, y) in plane.data().iter().zip(back.data()) {
            prop_assert_eq!(*x as f32 as f64, *y);
        }
    }
}
