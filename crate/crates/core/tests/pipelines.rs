use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satsynth::diffusion::*;
use satsynth::image::{luma, Bitmap, Image};
use satsynth::ingest::{procedural_tile, GeoCoordinate, Layer, LayerPalette, TilePair};
use satsynth::maskgen::{bezier_mask, Mask, MaskGenerator, SizeClass};
use satsynth::pipelines::*;

const CITIES: [&str; 2] = ["lisbon", "osaka"];

fn micro(in_channels: usize) -> DiffusionConfig {
    DiffusionConfig::micro(in_channels, CITIES.len())
}

fn randomized(cfg: DiffusionConfig, seed: u64) -> ModelState<f32> {
    let mut st = ModelState::<f32>::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in st.params.iter_mut() {
        *p = rng.random_range(-0.2..0.2);
    }
    st
}

fn model(id: &str, st: ModelState<f32>, steps: usize) -> GenerativeModel<f32> {
    GenerativeModel::new(id, st, steps, CITIES.iter().map(|s| s.to_string()).collect()).unwrap()
}

fn tile(seed: u64) -> TilePair {
    let mut t = procedural_tile(seed, GeoCoordinate::new(38.7, -9.1).unwrap(), 32, 16).unwrap();
    t.city = "lisbon".into();
    t
}

fn random_mask(rng: &mut ChaCha8Rng, size: usize) -> Bitmap {
    let density = rng.random_range(0.05..0.6);
    Bitmap { width: size, height: size, bits: (0..size * size).map(|_| rng.random::<f64>() < density).collect() }
}

#[test]
fn inpainting_invariants() {
    let m = model("img", randomized(micro(6), 1), 30);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..4 {
        let t = tile(k);
        let reference = Image::<f32>::from_rgb8(&t.satellite);
        let basemap = Image::<f32>::from_rgb8(&t.basemap);
        let cond = Conditioning::new(Some(&basemap), Some(0));
        let opts = SampleOptions::new(k);

        let mask = random_mask(&mut rng, 32);
        let out = inpaint(&m.state, &m.schedule, &reference, &cond, &mask, &opts).unwrap();
        assert!(!out.empty_mask);
        for c in 0..3 {
            for (i, &g) in mask.bits.iter().enumerate() {
                if !g {
                    assert_eq!(out.image.channel(c)[i].to_bits(), reference.channel(c)[i].to_bits());
                }
            }
        }

        let empty = inpaint(&m.state, &m.schedule, &reference, &cond, &Bitmap::new(32, 32), &opts).unwrap();
        assert!(empty.empty_mask);
        assert_eq!(empty.image, reference);

        let full = inpaint(&m.state, &m.schedule, &reference, &cond, &Bitmap::full(32, 32), &opts).unwrap();
        assert_eq!(full.image, sample(&m.state, &m.schedule, &cond, &opts).unwrap());
    }
}

#[test]
fn inpainting_with_resampling_keeps_known_pixels() {
    let m = model("img", randomized(micro(3), 2), 10);
    let t = tile(1);
    let reference = Image::<f32>::from_rgb8(&t.satellite);
    let mask = bezier_mask(32, 0.15, 4).unwrap().bitmap;
    let mut opts = SampleOptions::new(1);
    opts.resample = 3;
    let out = inpaint(&m.state, &m.schedule, &reference, &Conditioning::new(None, Some(1)), &mask, &opts).unwrap();
    let plain = inpaint(&m.state, &m.schedule, &reference, &Conditioning::new(None, Some(1)), &mask, &SampleOptions::new(1)).unwrap();
    assert_ne!(out.image, plain.image);
    for (i, &g) in mask.bits.iter().enumerate() {
        if !g {
            assert_eq!(out.image.channel(0)[i], reference.channel(0)[i]);
        }
    }
}

#[test]
fn inpaint_rejects_mismatched_mask() {
    let m = model("img", randomized(micro(3), 2), 5);
    let reference = Image::<f32>::zeros(3, 32, 32);
    let r = inpaint(&m.state, &m.schedule, &reference, &Conditioning::default(), &Bitmap::new(16, 16), &SampleOptions::new(0));
    assert!(matches!(r, Err(PipelineError::Shape(_))));
}

#[test]
fn fully_synthetic_mode_preconditions() {
    let img = model("img", randomized(micro(6), 1), 5);
    let t = tile(2);
    let opts = SynthOptions::default();
    assert!(matches!(
        generate_fully_synthetic(&img, None, BasemapMode::Truth, "lisbon", None, 0, &opts),
        Err(PipelineError::Missing(_))
    ));
    assert!(matches!(
        generate_fully_synthetic(&img, None, BasemapMode::Generated, "lisbon", Some(&t), 0, &opts),
        Err(PipelineError::Missing(_))
    ));
    match generate_fully_synthetic(&img, None, BasemapMode::None, "paris", None, 0, &opts) {
        Err(PipelineError::UnknownCity { name, known }) => {
            assert_eq!(name, "paris");
            assert_eq!(known, vec!["lisbon", "osaka"]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn fully_synthetic_modes_record_provenance() {
    let img = model("img", randomized(micro(6), 1), 8);
    let bm = model("bm", randomized(micro(3), 5), 8);
    let t = tile(3);
    let opts = SynthOptions::default();
    for mode in BasemapMode::ALL {
        let a = generate_fully_synthetic(&img, Some(&bm), mode, "osaka", Some(&t), 11, &opts).unwrap();
        let b = generate_fully_synthetic(&img, Some(&bm), mode, "osaka", Some(&t), 11, &opts).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.provenance, b.provenance);
        assert_eq!(a.provenance.mode, mode);
        assert_eq!(a.provenance.class_id, 1);
        assert!(a.provenance.color_matched);
        assert_eq!(a.generated_basemap.is_some(), mode == BasemapMode::Generated);
        if let Some(g) = &a.generated_basemap {
            assert_eq!(satsynth::ingest::palette_violations(g, &LayerPalette::default()), 0);
        }
    }
}

fn empty_mask(size: usize) -> Mask {
    Mask {
        bitmap: Bitmap::new(size, size),
        area_fraction: 0.0,
        size_class: SizeClass::XSmall,
        generator: MaskGenerator::Bezier,
        seed: 0,
    }
}

fn manip_models() -> (GenerativeModel<f32>, GenerativeModel<f32>) {
    let bm = model("bm", randomized(micro(3).with_aux_classes(2), 7), 10);
    let img = model("img", randomized(micro(6), 8), 10);
    (bm, img)
}

#[test]
fn two_stage_with_empty_mask_is_identity() {
    let (bm, img) = manip_models();
    let t = tile(4);
    let out = two_stage_manipulate(&bm, &img, &t, &empty_mask(32), ManipulationClass::BuildingsRoads, "lisbon", 1, 1.0).unwrap();
    assert_eq!(out.basemap, t.basemap);
    assert_eq!(out.image, t.satellite);
}

#[test]
fn two_stage_preserves_known_pixels_and_records_everything() {
    let (bm, img) = manip_models();
    let t = tile(5);
    let mask = bezier_mask(32, 0.1, 9).unwrap();
    let out = two_stage_manipulate(&bm, &img, &t, &mask, ManipulationClass::GreenspaceWater, "lisbon", 2, 1.0).unwrap();
    let palette = LayerPalette::default();
    assert_eq!(satsynth::ingest::palette_violations(&out.basemap, &palette), 0);
    let mut changed = 0;
    for (i, (&g, (a, b))) in mask.bitmap.bits.iter().zip(out.image.pixels().zip(t.satellite.pixels())).enumerate() {
        if !g {
            assert_eq!(a, b);
            assert_eq!(out.basemap.as_raw()[3 * i..3 * i + 3], t.basemap.as_raw()[3 * i..3 * i + 3]);
        } else if a != b {
            changed += 1;
        }
    }
    assert!(changed > 0);
    let json = serde_json::to_value(&out.provenance).unwrap();
    for (k, v) in json.as_object().unwrap() {
        assert!(!v.is_null(), "{k} is null");
    }
}

#[test]
fn two_stage_errors_name_the_stage() {
    let (bm, img) = manip_models();
    let t = tile(5);
    let mask = bezier_mask(32, 0.1, 9).unwrap();
    // basemap model without manipulation classes
    let plain = model("plain", randomized(micro(3), 7), 5);
    match two_stage_manipulate(&plain, &img, &t, &mask, ManipulationClass::BuildingsRoads, "lisbon", 2, 1.0) {
        Err(PipelineError::Stage { stage: "basemap", .. }) => {}
        other => panic!("{other:?}"),
    }
    let wrong = model("small", randomized(DiffusionConfig { resolution: 16, ..micro(6) }, 1), 5);
    match two_stage_manipulate(&bm, &wrong, &t, &mask, ManipulationClass::BuildingsRoads, "lisbon", 2, 1.0) {
        Err(PipelineError::Stage { stage: "satellite", .. }) => {}
        other => panic!("{other:?}"),
    }
}

/// Majority content of a basemap as a manipulation class label.
fn basemap_label(basemap: &RgbImage, palette: &LayerPalette) -> ManipulationClass {
    let (mut built, mut green) = (0, 0);
    for px in basemap.pixels() {
        match palette.layer_of(px) {
            Some(Layer::Buildings | Layer::Roads | Layer::Highways) => built += 1,
            Some(Layer::Greenspace | Layer::Water) => green += 1,
            _ => {}
        }
    }
    if built >= green {
        ManipulationClass::BuildingsRoads
    } else {
        ManipulationClass::GreenspaceWater
    }
}

#[test]
fn buildings_roads_class_shifts_masked_palette() {
    let palette = LayerPalette::default();
    let cfg = micro(3).with_aux_classes(2);
    let mut st = ModelState::<f32>::new(cfg, 0).unwrap();
    let sch = NoiseSchedule::<f32>::build(100, ScheduleKind::Linear).unwrap();
    let data: Vec<TrainExample<f32>> = (0..24)
        .map(|s| {
            let t = tile(100 + s);
            TrainExample {
                image: Image::from_rgb8(&t.basemap),
                basemap: None,
                class: Some(0),
                aux_class: Some(basemap_label(&t.basemap, &palette).aux_id()),
            }
        })
        .collect();
    let opts = TrainOptions { iterations: 400, batch_size: 8, optimizer: AdamConfig::with_lr(2e-3), flips: true, seed: 1 };
    train(&mut st, &sch, &data, &opts, |_, _| true).unwrap();
    let bm = model("bm", st, 100);
    let img = model("img", randomized(micro(6), 8), 10);

    // a tile whose mask covers greenspace only
    let green = Rgb([120u8, 190, 110]);
    let mut t = tile(7);
    let mut mask = Bitmap::new(32, 32);
    for y in 8..22 {
        for x in 8..22 {
            t.basemap.put_pixel(x, y, green);
            mask.set(x as usize, y as usize, true);
        }
    }
    let mask = Mask::from_bitmap(mask, MaskGenerator::Bezier, 0).unwrap();
    let built = |img: &RgbImage| {
        mask.bitmap
            .bits
            .iter()
            .enumerate()
            .filter(|(i, &g)| {
                let px = img.get_pixel((*i % 32) as u32, (*i / 32) as u32);
                g && matches!(palette.layer_of(px), Some(Layer::Buildings | Layer::Roads | Layer::Highways))
            })
            .count()
    };
    assert_eq!(built(&t.basemap), 0);
    let mut shifted = 0;
    for seed in 0..3 {
        let out = two_stage_manipulate(&bm, &img, &t, &mask, ManipulationClass::BuildingsRoads, "lisbon", seed, 1.0).unwrap();
        if built(&out.basemap) > 0 {
            shifted += 1;
        }
    }
    assert_eq!(shifted, 3);
}

fn square_edit(base: &RgbImage, x0: u32, y0: u32, color: Rgb<u8>) -> RgbImage {
    let mut e = base.clone();
    for y in y0..y0 + 10 {
        for x in x0..x0 + 10 {
            e.put_pixel(x, y, color);
        }
    }
    e
}

#[test]
fn identity_edit_records_an_empty_stage() {
    let img = model("img", randomized(micro(6), 8), 10);
    let mut s = EditSession::new("s1", tile(9), "lisbon", 3);
    let same = s.current_basemap().clone();
    let stage = compound_edit_step(&mut s, &img, &same, &EditOptions::default()).unwrap().clone();
    assert!(stage.mask.none_set());
    assert_eq!(stage.image, s.reference.satellite);
    assert_eq!(s.stages.len(), 1);
}

#[test]
fn square_edit_mask_is_dilated_diff() {
    let img = model("img", randomized(micro(6), 8), 10);
    let t = tile(9);
    let palette = LayerPalette::default();
    let water = palette.color(Layer::Water);
    let edited = square_edit(&t.basemap, 11, 11, water);
    let mask = edit_mask(&t.basemap, &edited, 4);
    let mut expected = Bitmap::new(32, 32);
    for y in 0..32 {
        for x in 0..32 {
            let near = (0..32usize).any(|yy| {
                (0..32usize).any(|xx| {
                    t.basemap.get_pixel(xx as u32, yy as u32) != edited.get_pixel(xx as u32, yy as u32)
                        && xx.abs_diff(x) <= 4
                        && yy.abs_diff(y) <= 4
                })
            });
            expected.set(x, y, near);
        }
    }
    assert_eq!(mask, expected);
    // when every pixel of the square changes, the mask is exactly 18x18
    let mut plain = t.clone();
    for px in plain.basemap.pixels_mut() {
        *px = palette.color(Layer::Background);
    }
    let sq = square_edit(&plain.basemap, 11, 11, water);
    let m = edit_mask(&plain.basemap, &sq, 4);
    assert_eq!(m.count(), 18 * 18);
    assert!(m.get(7, 7) && m.get(24, 24) && !m.get(6, 7) && !m.get(25, 24));

    let mut s = EditSession::new("s", t, "lisbon", 0);
    let stage = compound_edit_step(&mut s, &img, &edited, &EditOptions::default()).unwrap();
    assert_eq!(stage.mask, expected);
}

#[test]
fn three_edits_leave_outside_pixels_untouched() {
    let img = model("img", randomized(micro(6), 8), 10);
    let palette = LayerPalette::default();
    let mut s = EditSession::new("s", tile(10), "osaka", 5);
    let original = s.reference.satellite.clone();
    let edits = [(2, 2, Layer::Water), (18, 4, Layer::Buildings), (8, 20, Layer::Greenspace)];
    for (x, y, layer) in edits {
        let next = square_edit(s.current_basemap(), x, y, palette.color(layer));
        compound_edit_step(&mut s, &img, &next, &EditOptions::default()).unwrap();
    }
    assert_eq!(s.stages.len(), 3);
    let union = s.stages.iter().fold(Bitmap::new(32, 32), |acc, st| acc.union(&st.mask));
    assert!(!union.none_set());
    for (i, (a, b)) in s.current_image().pixels().zip(original.pixels()).enumerate() {
        if !union.bits[i] {
            assert_eq!(a, b);
        }
    }
    // each stage's input is the previous stage's output
    for k in 1..3 {
        for (i, (a, b)) in s.stages[k].image.pixels().zip(s.stages[k - 1].image.pixels()).enumerate() {
            if !s.stages[k].mask.bits[i] {
                assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn non_palette_edit_is_rejected_with_count() {
    let img = model("img", randomized(micro(6), 8), 10);
    let mut s = EditSession::new("s", tile(11), "lisbon", 0);
    let mut bad = s.current_basemap().clone();
    bad.put_pixel(0, 0, Rgb([1, 2, 3]));
    bad.put_pixel(5, 5, Rgb([1, 2, 3]));
    assert!(matches!(
        compound_edit_step(&mut s, &img, &bad, &EditOptions::default()),
        Err(PipelineError::NonPalette { count: 2 })
    ));
    assert!(s.stages.is_empty());
}

#[test]
fn style_transfer_zero_guidance_and_determinism() {
    let m = GenerativeModel::new("dis", randomized(DiffusionConfig::micro(6, 2), 3), 10, vec!["flood".into(), "fire".into()]).unwrap();
    let (before, _) = disaster_pair(1, 32).unwrap();
    let src = Image::<f32>::from_rgb8(&before);
    let hook = GuidanceHook::new(Arc::new(TargetColorScorer { target: [0.0; 3] }), 0.0);
    let a = style_transfer(&m, &src, 1, None, 4, 1.0).unwrap();
    let b = style_transfer(&m, &src, 1, Some(&hook), 4, 1.0).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, style_transfer(&m, &src, 1, None, 4, 1.0).unwrap());
    assert!(matches!(
        style_transfer(&m, &src, 2, None, 4, 1.0),
        Err(PipelineError::Diffusion(DiffusionError::UnknownClass { .. }))
    ));
}

fn mean_luma(img: &RgbImage) -> f64 {
    img.pixels().map(luma).sum::<f64>() / (img.width() * img.height()) as f64
}

#[test]
fn toy_disaster_model_darkens_its_input() {
    let pairs: Vec<(RgbImage, RgbImage)> = (0..16).map(|s| disaster_pair(s, 32).unwrap()).collect();
    for (b, a) in &pairs {
        assert!(mean_luma(a) < mean_luma(b));
    }
    let data: Vec<TrainExample<f32>> = pairs
        .iter()
        .map(|(b, a)| TrainExample {
            image: Image::from_rgb8(a),
            basemap: Some(Image::from_rgb8(b)),
            class: Some(0),
            aux_class: None,
        })
        .collect();
    let mut st = ModelState::<f32>::new(DiffusionConfig::micro(6, 1), 0).unwrap();
    let sch = NoiseSchedule::<f32>::build(100, ScheduleKind::Linear).unwrap();
    let opts = TrainOptions { iterations: 300, batch_size: 8, optimizer: AdamConfig::with_lr(2e-3), flips: true, seed: 0 };
    train(&mut st, &sch, &data, &opts, |_, _| true).unwrap();
    let m = GenerativeModel::new("dis", st, 100, vec!["smoke".into()]).unwrap();
    let mut darker = 0;
    for seed in 0..10 {
        let (before, _) = disaster_pair(1000 + seed, 32).unwrap();
        let out = style_transfer(&m, &Image::<f32>::from_rgb8(&before), 0, None, seed, 1.0).unwrap();
        if mean_luma(&out.to_rgb8()) < mean_luma(&before) {
            darker += 1;
        }
    }
    assert!(darker >= 9, "{darker}/10 darker");
}
