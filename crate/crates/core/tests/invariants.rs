//! Attention, entropy and exploration invariants on randomized inputs.

mod common;

use ame_core::data::Sample;
use ame_core::glimpse::{entropy_map, explore, ExploreOptions, GlimpseSpec, SelectorKind};
use ame_core::model::{EncodeOptions, EntropySource, MaeModel, ModelConfig};
use ame_core::rng::{stream, Purpose};
use ame_core::Tape;
use proptest::prelude::*;

fn model(cfg: ModelConfig, seed: u64) -> MaeModel<f64> {
    MaeModel::new(cfg, seed).unwrap()
}

fn sample(cfg: &ModelConfig, seed: u64) -> Sample {
    common::random_sample(cfg, &format!("s{seed}"), &mut common::rng(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoder_rows_are_distributions_and_pads_get_no_mass(seed in 0u64..1000, extra in 1usize..5, layer in 0usize..2) {
        let cfg = common::tiny();
        let m = model(cfg.clone(), seed);
        let mut rng = common::rng(seed);
        let img = common::random_image(1, 16, 16, &mut rng);
        let (visible, _) = common::random_visible(&cfg, &img, &mut rng);
        let t = visible.len();
        let mut tape = Tape::inference();
        let opts = EncodeOptions { pad_to: Some(t + extra), capture_layer: Some(layer) };
        let cap = m.encode(&mut tape, &visible, opts).unwrap().capture.unwrap();
        prop_assert_eq!(cap.seq_len(), t + extra + 1);
        for h in 0..cap.heads() {
            for q in 0..cap.seq_len() {
                let row = cap.row(h, q);
                let s: f64 = row.iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-6, "row sum {}", s);
                prop_assert!(row[t + 1..].iter().all(|&p| p == 0.0));
            }
        }
    }

    #[test]
    fn entropy_map_bounds_and_known_zeros(seed in 0u64..1000, kkt in any::<bool>(), layer in 0usize..2) {
        let cfg = ModelConfig {
            attention_source_layer: Some(layer),
            entropy_source: if kkt { EntropySource::Kkt } else { EntropySource::Attention },
            ..common::tiny()
        };
        let m = model(cfg.clone(), seed);
        let mut rng = common::rng(seed + 7);
        let img = common::random_image(1, 16, 16, &mut rng);
        let (visible, known) = common::random_visible(&cfg, &img, &mut rng);
        let cap = m.infer(&visible, true).unwrap().capture.unwrap();
        let s = cap.seq_len();
        prop_assert_eq!(s, cfg.num_patches() + 1);
        let (rows, cols) = cfg.grid();
        let map = entropy_map(&cap, &known, rows, cols).unwrap();
        let bound = cap.heads() as f64 * (s as f64).ln();
        for (i, &v) in map.values.iter().enumerate() {
            prop_assert!((0.0..=bound).contains(&v));
            if known[i] {
                prop_assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn first_glimpse_ignores_image_content(weights in 0u64..50, a in 0u64..10_000, b in 0u64..10_000) {
        let cfg = common::tiny();
        let m = model(cfg.clone(), weights);
        let spec = GlimpseSpec::plain(8, 1);
        let first = |s: u64| {
            explore(&m, &sample(&cfg, s), &spec, SelectorKind::Attention, stream(0, Purpose::Selector, s), &ExploreOptions::default())
                .unwrap()
                .anchors[0]
        };
        prop_assert_eq!(first(a), first(b));
    }

    #[test]
    fn checkerboard_known_count(seed in 0u64..500, side in 1usize..3, t in 0usize..9) {
        let cfg = common::tiny();
        let n = cfg.num_patches();
        prop_assume!(t * side * side <= n);
        let m = model(cfg.clone(), seed);
        let spec = GlimpseSpec::plain(side * cfg.patch_size, t);
        let r = explore(&m, &sample(&cfg, seed), &spec, SelectorKind::Checker, stream(seed, Purpose::Selector, 0), &ExploreOptions::default()).unwrap();
        prop_assert_eq!(r.known.iter().filter(|&&k| k).count(), t * side * side);
        prop_assert_eq!(r.steps.len(), t + 1);
        prop_assert!(!r.exhausted);
    }

    #[test]
    fn ame_never_wastes_a_glimpse(seed in 0u64..500, side in 1usize..4, t in 1usize..12) {
        let cfg = common::tiny();
        let (rows, cols) = cfg.grid();
        let m = model(cfg.clone(), seed);
        let spec = GlimpseSpec::plain(side * cfg.patch_size, t);
        let r = explore(&m, &sample(&cfg, seed), &spec, SelectorKind::Attention, stream(0, Purpose::Selector, 0), &ExploreOptions::default()).unwrap();
        let mut known = vec![false; rows * cols];
        for a in &r.anchors {
            let footprint = |k: &[bool]| (a.row..a.row + side).flat_map(|y| (a.col..a.col + side).map(move |x| k[y * cols + x])).collect::<Vec<_>>();
            prop_assert!(footprint(&known).iter().any(|&k| !k), "anchor {:?} was fully known", a);
            for y in a.row..a.row + side {
                for x in a.col..a.col + side {
                    known[y * cols + x] = true;
                }
            }
        }
        prop_assert_eq!(&known, &r.known);
        // stopping early is only allowed once everything is known
        prop_assert_eq!(r.exhausted, r.anchors.len() < t);
        if r.exhausted {
            prop_assert!(known.iter().all(|&k| k));
        }
    }
}

#[test]
fn random_selector_steps_match_known_patches() {
    let cfg = common::tiny();
    let m = model(cfg.clone(), 1);
    let spec = GlimpseSpec::plain(8, 5);
    let opts = ExploreOptions {
        entropy: true,
        ..ExploreOptions::default()
    };
    let r = explore(
        &m,
        &sample(&cfg, 1),
        &spec,
        SelectorKind::Random,
        stream(1, Purpose::Selector, 0),
        &opts,
    )
    .unwrap();
    assert_eq!(r.steps.len(), 6);
    for (k, s) in r.steps.iter().enumerate() {
        assert_eq!(s.step, k);
        assert_eq!(s.anchor.is_some(), k < 5);
        assert_eq!(s.entropy.is_some(), k < 5);
    }
    assert_eq!(r.steps[0].known_patches, 0);
    assert_eq!(r.final_step().known_patches, r.known.iter().filter(|&&k| k).count());
}

#[test]
fn retinal_episode_on_a_wide_image() {
    let cfg = ModelConfig {
        image_h: 32,
        image_w: 64,
        patch_size: 8,
        ..common::tiny()
    };
    let m = model(cfg.clone(), 2);
    let spec = GlimpseSpec::retinal(24, 3, 4);
    let r = explore(
        &m,
        &sample(&cfg, 2),
        &spec,
        SelectorKind::Attention,
        stream(0, Purpose::Selector, 0),
        &ExploreOptions::default(),
    )
    .unwrap();
    assert_eq!(r.anchors.len(), 4);
    assert_eq!(r.regime, "4x24^2-retinal");
    assert!(r.pixel_percent < r.area_percent);
}

#[test]
fn single_precision_rows_stay_normalized() {
    let cfg = ModelConfig::desk();
    let m = MaeModel::<f32>::new(cfg.clone(), 5).unwrap();
    let mut rng = common::rng(5);
    let img = common::random_image(3, 64, 64, &mut rng);
    let (visible, known) = common::random_visible(&cfg, &img, &mut rng);
    let visible = ame_core::model::Visible::new(visible.patches().cast::<f32>(), visible.positions().to_vec()).unwrap();
    let cap = m.infer(&visible, true).unwrap().capture.unwrap();
    for h in 0..cap.heads() {
        for q in 0..cap.seq_len() {
            let s: f64 = cap.row(h, q).iter().map(|&p| p as f64).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }
    let map = entropy_map(&cap, &known, 8, 8).unwrap();
    assert!(map.values.iter().zip(&known).all(|(&v, &k)| !k || v == 0.0));
}
