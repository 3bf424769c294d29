//! Property tests for the structural invariants, plus two fixed-fixture
//! regressions whose tolerances were frozen from observed behavior.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use binsonar::classify::{confusion_matrix, EvalResult, PredictionRecord};
use binsonar::corpus::{read_feature_matrix, write_feature_matrix, FeatureMatrix, SampleId};
use binsonar::descriptors::{
    aggregate_global, aggregate_segmented, descriptor_frames, extract_feature, DescriptorConfig,
    DescriptorKind,
};
use binsonar::ortho::{fuse_majority, jfs_pair};
use binsonar::signal::{
    bytes_to_signal, frame_signal, BytesPerSample, FrameParams, Signal, DEFAULT_HOP,
};
use binsonar::staticfeat::{
    binary_to_image, byte_bigrams, pehash_vector, PeSummary, SectionSummary,
};

fn arb_kind() -> impl Strategy<Value = DescriptorKind> {
    prop_oneof![
        Just(DescriptorKind::Mfcc),
        Just(DescriptorKind::MelSpectrogram),
        Just(DescriptorKind::ChromaStft),
        Just(DescriptorKind::ChromaCqt),
        Just(DescriptorKind::ChromaCens),
    ]
}

fn arb_bps() -> impl Strategy<Value = BytesPerSample> {
    prop_oneof![
        Just(BytesPerSample::One),
        Just(BytesPerSample::Two),
        Just(BytesPerSample::Four),
    ]
}

proptest! {
    #[test]
    fn frame_count_formula_holds(len in 1usize..8000) {
        let signal = Signal {
            samples: (0..len).map(|i| ((i % 17) as f64 - 8.0) / 8.0).collect(),
            source_len: len,
            bytes_per_sample: BytesPerSample::One,
        };
        let frames = frame_signal(&signal, &FrameParams::default()).unwrap();
        prop_assert_eq!(frames.nrows(), 1 + len / DEFAULT_HOP);
    }

    #[test]
    fn frames_are_bounded_by_the_window(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.gen_range(1..6000);
        let signal = Signal {
            samples: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            source_len: len,
            bytes_per_sample: BytesPerSample::One,
        };
        let params = FrameParams::default();
        let frames = frame_signal(&signal, &params).unwrap();
        for row in frames.outer_iter() {
            for (k, &v) in row.iter().enumerate() {
                prop_assert!(v.abs() <= params.window[k] + 1e-12);
            }
        }
    }

    #[test]
    fn one_byte_decode_round_trips(bytes in proptest::collection::vec(any::<u8>(), 1..4000)) {
        let signal = bytes_to_signal(&bytes, BytesPerSample::One).unwrap();
        for (i, &b) in bytes.iter().enumerate() {
            let re_encoded = (signal.samples[i] * 128.0 + 128.0).round() as i64;
            prop_assert_eq!(re_encoded, b as i64);
        }
    }

    #[test]
    fn bigram_counts_sum_to_len_minus_one(bytes in proptest::collection::vec(any::<u8>(), 0..2000)) {
        let counts = byte_bigrams(&bytes);
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        prop_assert_eq!(total, bytes.len().saturating_sub(1) as u64);
    }

    #[test]
    fn pehash_entries_are_hex_ascii(
        chars in any::<u16>(),
        subsystem in any::<u16>(),
        stack in any::<u64>(),
        heap in any::<u64>(),
        sections in proptest::collection::vec((any::<u32>(), any::<u32>(), any::<u32>()), 0..8),
    ) {
        let summary = PeSummary {
            image_characteristics: chars,
            subsystem,
            stack_commit: stack,
            heap_commit: heap,
            sections: sections
                .into_iter()
                .map(|(va, raw, fl)| SectionSummary {
                    virtual_address: va,
                    raw_size: raw,
                    characteristics: fl,
                })
                .collect(),
        };
        let v = pehash_vector(&summary);
        prop_assert_eq!(v.len(), 40);
        for &code in &v {
            let c = code as u32;
            prop_assert!((48..=57).contains(&c) || (97..=102).contains(&c));
        }
    }

    #[test]
    fn binary_image_is_total_and_covering(bytes in proptest::collection::vec(any::<u8>(), 1..40_000)) {
        let img = binary_to_image(&bytes).unwrap();
        prop_assert!([32usize, 64, 128, 256, 384, 512, 768, 1024].contains(&img.width));
        prop_assert!(img.width * img.height >= bytes.len());
        prop_assert_eq!(img.pixels.len(), img.width * img.height);
        let again = binary_to_image(&bytes).unwrap();
        prop_assert_eq!(img, again);
    }

    #[test]
    fn segmented_p1_equals_global(
        n_frames in 1usize..40,
        dim in 1usize..24,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = ndarray::Array2::from_shape_fn((n_frames, dim), |_| rng.gen_range(-5.0..5.0));
        let global = aggregate_global(&grid.view()).unwrap();
        let seg = aggregate_segmented(&grid.view(), 1);
        prop_assert_eq!(global, seg);
    }

    #[test]
    fn jfs_range_and_symmetry(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let e_n = vec![vec![0.0, a], vec![b, 0.0]];
        let forward = jfs_pair(&e_n, 0, 1).unwrap();
        let backward = jfs_pair(&e_n, 1, 0).unwrap();
        prop_assert_eq!(forward, backward);
        let floor = (2.0 - 2f64.sqrt()) / 2.0;
        prop_assert!(forward >= floor - 1e-15 && forward <= 1.0 + 1e-15);
    }

    #[test]
    fn fmx_round_trip_is_identity(
        dim in 1usize..24,
        rows in proptest::collection::vec(proptest::collection::vec(-1e6f32..1e6, 24), 1..12),
    ) {
        let mut matrix = FeatureMatrix::new("prop", dim);
        for (i, row) in rows.iter().enumerate() {
            let values: Vec<f64> = row[..dim].iter().map(|&v| v as f64).collect();
            matrix
                .push(SampleId::from_content(format!("row {i}").as_bytes()), &values)
                .unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prop.fmx");
        write_feature_matrix(&matrix, &path).unwrap();
        let back = read_feature_matrix(&path).unwrap();
        prop_assert_eq!(matrix, back);
    }
}

proptest! {
    // descriptor extraction is comparatively heavy, so fewer cases
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn descriptor_dims_match_the_contract(
        bytes in proptest::collection::vec(any::<u8>(), 1..1500),
        kind in arb_kind(),
        expanded in any::<bool>(),
        bps in arb_bps(),
    ) {
        let cfg = DescriptorConfig {
            kind,
            expanded,
            segments: kind.default_segments(),
            bytes_per_sample: bps,
        };
        let fv = extract_feature(&bytes, &cfg).unwrap();
        prop_assert_eq!(fv.values.len(), cfg.dim());
        prop_assert!(fv.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn chroma_frames_stay_in_unit_range(bytes in proptest::collection::vec(any::<u8>(), 1..1500)) {
        let grid = descriptor_frames(&bytes, DescriptorKind::ChromaStft, BytesPerSample::One).unwrap();
        for &v in grid.iter() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn cens_frames_have_unit_or_zero_norm(bytes in proptest::collection::vec(any::<u8>(), 1..1200)) {
        let grid = descriptor_frames(&bytes, DescriptorKind::ChromaCens, BytesPerSample::One).unwrap();
        for row in grid.outer_iter() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm.abs() < 1e-9 || (norm - 1.0).abs() < 1e-9);
        }
    }
}

fn result_from_predictions(name: &str, predictions: Vec<PredictionRecord>, classes: Vec<String>) -> EvalResult {
    let correct = predictions.iter().filter(|p| p.is_correct()).count();
    let accuracy = correct as f64 / predictions.len() as f64;
    let confusion = confusion_matrix(&predictions, &classes).unwrap();
    EvalResult {
        feature_name: name.to_string(),
        classifier: "knn".to_string(),
        seed: 0,
        folds: 10,
        accuracy,
        classes,
        confusion,
        predictions,
    }
}

proptest! {
    #[test]
    fn strict_majority_correct_implies_fused_correct(
        n_results in 2usize..6,
        n_samples in 1usize..30,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes: Vec<String> = vec!["c0".into(), "c1".into(), "c2".into()];
        let truths: Vec<usize> = (0..n_samples).map(|_| rng.gen_range(0..3)).collect();
        let mut votes: Vec<Vec<usize>> = vec![Vec::new(); n_results];
        for row in votes.iter_mut() {
            for &t in truths.iter() {
                let vote = if rng.gen_bool(0.6) { t } else { rng.gen_range(0..3) };
                row.push(vote);
            }
        }
        let results: Vec<EvalResult> = votes
            .iter()
            .enumerate()
            .map(|(r, v)| {
                let predictions: Vec<PredictionRecord> = v
                    .iter()
                    .enumerate()
                    .map(|(i, &vote)| PredictionRecord {
                        id: SampleId::from_content(format!("s{i}").as_bytes()),
                        true_label: classes[truths[i]].clone(),
                        predicted_label: classes[vote].clone(),
                        fold: 0,
                    })
                    .collect();
                result_from_predictions(&format!("f{r}"), predictions, classes.clone())
            })
            .collect();
        let fused = fuse_majority(&results).unwrap();
        for (i, &t) in truths.iter().enumerate() {
            let correct_votes = votes.iter().filter(|v| v[i] == t).count();
            if 2 * correct_votes > n_results {
                let id = SampleId::from_content(format!("s{i}").as_bytes());
                let fp = fused.predictions.iter().find(|p| p.id == id).unwrap();
                prop_assert_eq!(
                    &fp.predicted_label, &classes[t],
                    "sample {} with {}/{} correct votes", i, correct_votes, n_results
                );
            }
        }
    }
}

/// Doubling a file must move the global MFCC by no more than the boundary
/// frames can account for. The 1.5 figure is a frozen regression bound
/// (observed 0.99 on this fixture); the derived cap above it is the
/// boundary-frame share of twice the largest coefficient.
#[test]
fn concatenated_file_shifts_global_mfcc_only_at_boundaries() {
    let bytes: Vec<u8> = (0..8192u64).map(|i| ((i * 31 + i / 97) % 256) as u8).collect();
    let single = descriptor_frames(&bytes, DescriptorKind::Mfcc, BytesPerSample::One).unwrap();
    let doubled_bytes: Vec<u8> = bytes.iter().chain(bytes.iter()).cloned().collect();
    let doubled =
        descriptor_frames(&doubled_bytes, DescriptorKind::Mfcc, BytesPerSample::One).unwrap();
    let g1 = aggregate_global(&single.view()).unwrap();
    let g2 = aggregate_global(&doubled.view()).unwrap();
    let max_diff = g1
        .iter()
        .zip(&g2)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);

    let coeff_scale = single
        .iter()
        .chain(doubled.iter())
        .map(|v| v.abs())
        .fold(0.0f64, f64::max);
    // junction frames plus both reflect-padded edges
    let boundary_frames = (2048 / 512 + 1) + 2 * (2048 / (2 * 512));
    let derived_cap = boundary_frames as f64 / doubled.nrows() as f64 * 2.0 * coeff_scale;
    assert!(max_diff <= derived_cap, "{max_diff} vs cap {derived_cap}");
    assert!(max_diff <= 1.5, "regression: {max_diff}");
}

/// On isotropic noise every orientation at a given scale should respond
/// about equally. The 25% spread bound is frozen from an observed 11.7%
/// worst case on this seed; structured images violate it by an order of
/// magnitude, so the check discriminates.
#[test]
fn gist_orientations_respond_evenly_to_isotropic_noise() {
    use binsonar::staticfeat::{gist_vector, GrayImage};
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let pixels: Vec<u8> = (0..64 * 64).map(|_| rng.gen()).collect();
    let img = GrayImage {
        width: 64,
        height: 64,
        pixels,
    };
    let v = gist_vector(&img).unwrap();
    let per_filter: Vec<f64> = v.chunks(16).map(|c| c.iter().sum::<f64>() / 16.0).collect();
    let mut offset = 0;
    for &n_orient in &[8usize, 6, 6] {
        let group = &per_filter[offset..offset + n_orient];
        let mean = group.iter().sum::<f64>() / n_orient as f64;
        for g in group {
            assert!(
                (g - mean).abs() / mean < 0.25,
                "orientation response {g} strays from scale mean {mean}"
            );
        }
        offset += n_orient;
    }
}
