use std::f64::consts::FRAC_PI_2;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Tape, Tensor, Var};
use crate::jacobian::{exact_jacobian, exact_jacobian_pairs, principal_angles, RANK_TOL};
use crate::model::{DimensionPlan, LatentDecoder};

fn plan() -> DimensionPlan {
    DimensionPlan::from_blocks(12, 1, 1, 1, 2).unwrap()
}

fn audit_angles(world: &WorldSpec, points: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, s) = world.sample_latents(points, 0, &mut rng).unwrap();
    exact_jacobian_pairs(world, &c, &s)
        .unwrap()
        .iter()
        .map(|p| {
            principal_angles(&p.jc, &p.js, RANK_TOL)
                .unwrap()
                .smallest_angle
        })
        .collect()
}

#[test]
fn untilted_world_is_orthogonal_everywhere() {
    let w = forge_world(plan(), 0.0, NonlinearityConfig::default(), 1).unwrap();
    for a in audit_angles(&w, 10, 2) {
        assert!((a - FRAC_PI_2).abs() < 1e-8, "{a}");
    }
}

#[test]
fn tilted_world_pins_the_smallest_angle() {
    let big = DimensionPlan::from_blocks(16, 2, 2, 1, 3).unwrap();
    for (xi, p) in [(0.3, plan()), (0.1, big), (0.3, big)] {
        let w = forge_world(p, xi, NonlinearityConfig::default(), 7).unwrap();
        for a in audit_angles(&w, 32, 3) {
            assert!((a - (FRAC_PI_2 - xi)).abs() < 1e-8, "xi {xi}: {a}");
        }
    }
}

#[test]
fn identity_components_give_the_frame_matrix() {
    let w = forge_world(plan(), 0.2, NonlinearityConfig::identity(), 3).unwrap();
    let map = |tape: &mut Tape, z: Var| {
        let c = tape.slice_cols(z, 0, 2)?;
        let s = tape.slice_cols(z, 2, 2)?;
        w.decode_on_tape(tape, c, s)
    };
    let point = Tensor::matrix(1, 4, vec![0.3, -1.0, 2.0, 0.1]).unwrap();
    let jac = exact_jacobian(&map, &point, 0..4).unwrap();
    for i in 0..12 {
        for j in 0..4 {
            let f = if j < 2 {
                w.frame_c.get(i, j)
            } else {
                w.frame_s.get(i, j - 2)
            };
            assert_eq!(jac.get(i, j), f);
        }
    }
    // Axis frames: content on e₁, e₂; the first style column tilts toward e₁.
    assert_eq!(w.frame_c.get(0, 0), 1.0);
    assert_eq!(w.frame_s.get(0, 0), 0.2f64.sin());
    assert_eq!(w.frame_s.get(2, 0), 0.2f64.cos());
}

#[test]
fn rejects_bad_tilt_and_dimensions() {
    assert!(matches!(
        forge_world(plan(), FRAC_PI_2, NonlinearityConfig::default(), 0),
        Err(WorldError::Tilt(_))
    ));
    assert!(forge_world(plan(), -0.1, NonlinearityConfig::default(), 0).is_err());
    let mut small = plan();
    small.d = 3;
    assert!(forge_world(small, 0.0, NonlinearityConfig::default(), 0).is_err());
}

#[test]
fn sampling_is_reproducible_and_consistent() {
    let w = forge_world(plan(), 0.1, NonlinearityConfig::default(), 4).unwrap();
    let a = sample_world(&w, 50, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = sample_world(&w, 50, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);
    // Tape evaluation is an independent path through the same map.
    let x = w.decode(&a.c, &a.s).unwrap();
    for (p, q) in x.data().iter().zip(a.x.data()) {
        assert!((p - q).abs() < 1e-14);
    }
}

#[test]
fn style_laws_differ_across_domains() {
    let w = forge_world(plan(), 0.0, NonlinearityConfig::default(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mean = |s: &Tensor| -> Vec<f64> {
        (0..s.cols())
            .map(|j| (0..s.rows()).map(|i| s.get(i, j)).sum::<f64>() / s.rows() as f64)
            .collect()
    };
    let m0 = mean(&sample_world(&w, 10_000, 0, &mut rng).unwrap().s);
    let m1 = mean(&sample_world(&w, 10_000, 1, &mut rng).unwrap().s);
    let gap = m0
        .iter()
        .zip(&m1)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!(gap >= 0.5, "{gap}");
}

#[test]
fn inverse_recovers_latents() {
    let w = forge_world(plan(), 0.3, NonlinearityConfig::default(), 8).unwrap();
    let smp = sample_world(&w, 200, 0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let (c, s) = w.invert(&smp.x).unwrap();
    for (a, b) in c
        .data()
        .iter()
        .chain(s.data())
        .zip(smp.c.data().iter().chain(smp.s.data()))
    {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn distinct_latents_map_apart() {
    let w = forge_world(plan(), 0.2, NonlinearityConfig::default(), 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = sample_world(&w, 10_000, 0, &mut rng).unwrap();
    let b = sample_world(&w, 10_000, 1, &mut rng).unwrap();
    let dist = |t: &Tensor, u: &Tensor, i: usize| {
        t.row(i)
            .iter()
            .zip(u.row(i))
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt()
    };
    for i in 0..10_000 {
        let dz = (dist(&a.c, &b.c, i).powi(2) + dist(&a.s, &b.s, i).powi(2)).sqrt();
        if dz > 1e-6 {
            assert!(dist(&a.x, &b.x, i) > 1e-9, "pair {i}");
        }
    }
}

#[test]
fn style_rank_is_full() {
    let w = forge_world(plan(), 0.3, NonlinearityConfig::default(), 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (c, s) = w.sample_latents(32, 1, &mut rng).unwrap();
    for p in exact_jacobian_pairs(&w, &c, &s).unwrap() {
        let r = principal_angles(&p.jc, &p.js, RANK_TOL).unwrap();
        assert_eq!((r.rank_c, r.rank_s), (2, 2));
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn shared_block_creates_dependence() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let w = forge_world(plan(), 0.0, NonlinearityConfig::default(), 15).unwrap();
    let (c, s) = w.sample_latents(20_000, 1, &mut rng).unwrap();
    let col = |t: &Tensor, j: usize| (0..t.rows()).map(|i| t.get(i, j)).collect::<Vec<_>>();
    assert!(correlation(&col(&c, 0), &col(&s, 0)) > 0.9);

    let indep = DimensionPlan::from_blocks(12, 0, 2, 2, 2).unwrap();
    let w = forge_world(indep, 0.0, NonlinearityConfig::default(), 15).unwrap();
    let (c, s) = w.sample_latents(20_000, 1, &mut rng).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!(correlation(&col(&c, i), &col(&s, j)).abs() < 0.03);
        }
    }
}

#[test]
fn world_json_round_trip() {
    let w = forge_world(plan(), 0.25, NonlinearityConfig::default(), 16).unwrap();
    let back = WorldSpec::from_json(&w.to_json().unwrap()).unwrap();
    assert_eq!(w, back);
    let mut broken: serde_json::Value = serde_json::from_str(&w.to_json().unwrap()).unwrap();
    broken["surprise"] = serde_json::json!(1);
    assert!(WorldSpec::from_json(&broken.to_string()).is_err());
}

// ── colors ──────────────────────────────────────────────────────────────

#[test]
fn allowed_sets_remove_three_with_wraparound() {
    assert_eq!(allowed_set(0, &DIGIT_POOL, 3), (3..10).collect::<Vec<_>>());
    assert_eq!(allowed_set(9, &DIGIT_POOL, 3), (2..9).collect::<Vec<_>>());
    for y in 0..10 {
        assert_eq!(allowed_set(y, &BG_POOL, 3).len(), 7);
    }
}

/// `P(color ∈ A_y) = p + (1 − p)·mean_{j≠y} |A_j ∩ A_y| / 7`, by enumeration.
fn enumerated_in_set_probability(y: usize, p: f64) -> f64 {
    let own = allowed_set(y, &DIGIT_POOL, 3);
    let overlap: f64 = (0..10)
        .filter(|&j| j != y)
        .map(|j| {
            let other = allowed_set(j, &DIGIT_POOL, 3);
            other.iter().filter(|k| own.contains(k)).count() as f64 / 7.0
        })
        .sum::<f64>()
        / 9.0;
    p + (1.0 - p) * overlap
}

#[test]
fn biased_sampling_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let k = sample_biased_color(4, &DIGIT_POOL, 1.0, 3, &mut rng);
        assert!(allowed_set(4, &DIGIT_POOL, 3).contains(&k));
    }
    for y in [0, 5] {
        let own = allowed_set(y, &DIGIT_POOL, 3);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| own.contains(&sample_biased_color(y, &DIGIT_POOL, 0.8, 3, &mut rng)))
            .count();
        let expect = enumerated_in_set_probability(y, 0.8);
        assert!(
            (hits as f64 / n as f64 - expect).abs() < 0.01,
            "{y}: {expect}"
        );
    }
    let a: Vec<_> = {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        (0..20)
            .map(|_| sample_biased_color(2, &BG_POOL, 0.8, 3, &mut r))
            .collect()
    };
    let b: Vec<_> = {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        (0..20)
            .map(|_| sample_biased_color(2, &BG_POOL, 0.8, 3, &mut r))
            .collect()
    };
    assert_eq!(a, b);
}

#[test]
fn colorize_examples() {
    let blank = LabeledImage::gray(4, 4, vec![0.0; 16], 1);
    let out = colorize(&blank, ColorMode::Background, [255, 50, 50]);
    let Pixels::Rgb(v) = out.pixels else { panic!() };
    for px in v.chunks(3) {
        assert_eq!(px, [1.0, 50.0 / 255.0, 50.0 / 255.0]);
    }
    let full = LabeledImage::gray(3, 3, vec![1.0; 9], 2);
    let Pixels::Rgb(v) = colorize(&full, ColorMode::Digit, [50, 50, 255]).pixels else {
        panic!()
    };
    for px in v.chunks(3) {
        assert_eq!(px, [50.0 / 255.0, 50.0 / 255.0, 1.0]);
    }

    let mut cross = vec![0.0; 25];
    for k in 0..5 {
        cross[2 * 5 + k] = 1.0;
        cross[k * 5 + 2] = 1.0;
    }
    let img = LabeledImage::gray(5, 5, cross.clone(), 3);
    let Pixels::Rgb(v) = colorize(&img, ColorMode::Digit, [0, 170, 170]).pixels else {
        panic!()
    };
    for (i, &m) in cross.iter().enumerate() {
        let expect = if m == 1.0 {
            [0.0, 170.0 / 255.0, 170.0 / 255.0]
        } else {
            [0.0; 3]
        };
        assert_eq!(&v[3 * i..3 * i + 3], expect);
    }
    let Pixels::Rgb(v) = colorize(&img, ColorMode::Background, [0, 170, 170]).pixels else {
        panic!()
    };
    for (i, &m) in cross.iter().enumerate() {
        let expect = if m == 1.0 {
            [1.0; 3]
        } else {
            [0.0, 170.0 / 255.0, 170.0 / 255.0]
        };
        assert_eq!(&v[3 * i..3 * i + 3], expect);
    }
    assert_eq!(
        colorize(&img, ColorMode::Digit, [1, 2, 3]),
        colorize(&img, ColorMode::Digit, [1, 2, 3])
    );
}

#[test]
fn config_validation() {
    assert!(ColorizeConfig::default().validate().is_ok());
    let mut dup = ColorizeConfig::default();
    dup.digit_pool[1] = dup.digit_pool[0];
    assert!(dup.validate().is_err());
    let bad_p = ColorizeConfig {
        p_bg: 1.5,
        ..ColorizeConfig::default()
    };
    assert!(bad_p.validate().is_err());
}

// ── ingestion and dataset building ──────────────────────────────────────

fn write_idx(dir: &Path, n: usize, side: usize, seed: u64) -> ImageSource {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = dir.join("images.idx");
    let labels = dir.join("labels.idx");
    let mut f = std::fs::File::create(&images).unwrap();
    f.write_all(&0x0803u32.to_be_bytes()).unwrap();
    for v in [n, side, side] {
        f.write_all(&(v as u32).to_be_bytes()).unwrap();
    }
    let px: Vec<u8> = (0..n * side * side)
        .map(|_| if rng.random::<bool>() { 255 } else { 0 })
        .collect();
    f.write_all(&px).unwrap();
    let mut f = std::fs::File::create(&labels).unwrap();
    f.write_all(&0x0801u32.to_be_bytes()).unwrap();
    f.write_all(&(n as u32).to_be_bytes()).unwrap();
    f.write_all(&(0..n).map(|i| (i % 10) as u8).collect::<Vec<_>>())
        .unwrap();
    ImageSource::Idx { images, labels }
}

#[test]
fn idx_files_parse_and_errors_carry_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let src = write_idx(dir.path(), 7, 4, 0);
    let imgs = src.load().unwrap();
    assert_eq!(imgs.len(), 7);
    assert_eq!((imgs[3].width, imgs[3].height, imgs[3].label), (4, 4, 3));

    let bad = dir.path().join("bad.idx");
    std::fs::write(&bad, [0u8, 0, 8, 1, 0, 0, 0, 1, 0]).unwrap();
    match read_idx_images(&bad) {
        Err(WorldError::Ingest { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("{other:?}"),
    }
    let short = dir.path().join("short.idx");
    let mut bytes = 0x0803u32.to_be_bytes().to_vec();
    for v in [2u32, 3, 3] {
        bytes.extend(v.to_be_bytes());
    }
    bytes.extend([0u8; 10]);
    std::fs::write(&short, &bytes).unwrap();
    match read_idx_images(&short) {
        Err(WorldError::Ingest {
            offset, message, ..
        }) => {
            assert_eq!(offset, bytes.len() as u64);
            assert!(message.contains("18 bytes"), "{message}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn png_directory_fallback() {
    let dir = tempfile::tempdir().unwrap();
    for label in [2usize, 7] {
        let sub = dir.path().join(label.to_string());
        std::fs::create_dir_all(&sub).unwrap();
        let img = image::GrayImage::from_fn(6, 6, |x, _| image::Luma([(x * 40) as u8]));
        img.save(sub.join("a.png")).unwrap();
    }
    let imgs = read_png_dir(dir.path()).unwrap();
    assert_eq!(imgs.iter().map(|i| i.label).collect::<Vec<_>>(), vec![2, 7]);
    let Pixels::Gray(v) = &imgs[0].pixels else {
        panic!()
    };
    assert_eq!(v[1], 40.0 / 255.0);
    let resized = resize_to(&imgs[0], IMAGE_SIDE);
    assert_eq!((resized.width, resized.height), (32, 32));
    assert!(read_png_dir(&dir.path().join("2")).is_err());
}

#[test]
fn two_domain_set_is_complete_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let src = write_idx(dir.path(), 100, 28, 1);
    let cfg = ColorizeConfig {
        seed: 42,
        ..ColorizeConfig::default()
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let recs = build_two_domain_set(&src, &cfg, &out_a, None).unwrap();
    build_two_domain_set(&src, &cfg, &out_b, None).unwrap();
    assert_eq!(recs.iter().filter(|r| r.domain == 1).count(), 100);
    assert_eq!(recs.iter().filter(|r| r.domain == 2).count(), 100);
    let src_labels: Vec<usize> = src.load().unwrap().iter().map(|i| i.label).collect();
    for d in [1, 2] {
        let labels: Vec<usize> = recs
            .iter()
            .filter(|r| r.domain == d)
            .map(|r| r.label)
            .collect();
        assert_eq!(labels, src_labels);
    }
    for rel in ["manifest.csv", "domain1/000000.png", "domain2/000057.png"] {
        assert_eq!(
            std::fs::read(out_a.join(rel)).unwrap(),
            std::fs::read(out_b.join(rel)).unwrap()
        );
    }
    let data = load_two_domain_set(&out_a).unwrap();
    assert_eq!(data[0].x.shape(), &[100, 32 * 32 * 3]);
    assert!(data[1].x.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

/// Wilson–Hilferty approximation of the upper χ² quantile.
fn chi2_quantile(df: f64, z: f64) -> f64 {
    let k = 2.0 / (9.0 * df);
    df * (1.0 - k + z * k.sqrt()).powi(3)
}

#[test]
fn color_histograms_follow_the_mixture_law() {
    let dir = tempfile::tempdir().unwrap();
    let src = write_idx(dir.path(), 3000, 4, 2);
    let cfg = ColorizeConfig {
        seed: 9,
        ..ColorizeConfig::default()
    };
    let recs = build_two_domain_set(&src, &cfg, &dir.path().join("out"), None).unwrap();
    for domain in [1, 2] {
        let mut counts = [[0usize; 10]; 10];
        for r in recs.iter().filter(|r| r.domain == domain) {
            counts[r.label][r.color_index] += 1;
        }
        let mut stat = 0.0;
        for (y, row) in counts.iter().enumerate() {
            let n: usize = row.iter().sum();
            let own = allowed_set(y, &DIGIT_POOL, 3);
            for (k, &o) in row.iter().enumerate() {
                let mut prob = if own.contains(&k) { 0.8 / 7.0 } else { 0.0 };
                for j in (0..10).filter(|&j| j != y) {
                    if allowed_set(j, &DIGIT_POOL, 3).contains(&k) {
                        prob += 0.2 / 9.0 / 7.0;
                    }
                }
                let e = prob * n as f64;
                stat += (o as f64 - e).powi(2) / e;
            }
        }
        // 10 labels × 9 degrees of freedom, 0.999 level.
        let crit = chi2_quantile(90.0, 3.09);
        assert!(stat < crit, "domain {domain}: χ² {stat} ≥ {crit}");
    }
}
