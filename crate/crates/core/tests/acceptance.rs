//! Acceptance checks. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any failed.

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satsynth::bench::*;
use satsynth::dataset::*;
use satsynth::diffusion::*;
use satsynth::image::{Bitmap, Image};
use satsynth::ingest::{procedural_tile, GeoCoordinate, Layer, LayerPalette, SourceTag, TileStore};
use satsynth::maskgen::{bezier_mask, connected_components, grabcut_mask, size_class, MaskGenerator, SizeClass};
use satsynth::pipelines::{inpaint, BasemapMode, GenerativeModel};
use satsynth::scalar::{standard_normal, Scalar};

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn three_sigma(observed: f64, expected: f64, sigma: f64, what: &str) -> Result<(), String> {
    ensure!(
        (observed - expected).abs() <= 3.0 * sigma,
        "{what}: {observed:.4} outside {expected:.4} +- 3 x {sigma:.4}"
    );
    Ok(())
}

fn randomized<F: Scalar>(cfg: DiffusionConfig, seed: u64, spread: f64) -> ModelState<F> {
    let mut st = ModelState::<F>::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    for p in st.params.iter_mut() {
        *p = F::lit(rng.random_range(-spread..spread));
    }
    st
}

fn random_image<F: Scalar>(rng: &mut ChaCha8Rng, c: usize, r: usize) -> Image<F> {
    Image::from_vec(c, r, r, (0..c * r * r).map(|_| F::lit(rng.random_range(-1.0..1.0))).collect())
}

fn coord(k: usize, lane: usize) -> GeoCoordinate {
    GeoCoordinate::new(-40.0 + (k / 100) as f64 * 0.5, -150.0 + lane as f64 * 20.0 + (k % 100) as f64 * 0.05).unwrap()
}

// ---------------------------------------------------------------------------

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1;
                twice += if si > sj { 2 } else if si == sj { 1 } else { 0 };
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

fn metric_oracles() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for set in 0..200 {
        let n = rng.random_range(2..120);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        // coarse values on every other set so ties are exercised
        let scores: Vec<f64> = (0..n)
            .map(|_| if set % 2 == 0 { rng.random_range(0..10) as f64 } else { rng.random::<f64>() })
            .collect();
        let got = auc(&scores, &labels).map_err(|e| e.to_string())?;
        ensure!(got == brute_auc(&scores, &labels), "set {set}: auc {got} vs {}", brute_auc(&scores, &labels));
    }
    let mut defined = 0;
    for pair in 0..200 {
        let dp = rng.random_range(0.05..0.95);
        let dt = rng.random_range(0.05..0.95);
        let pred: Vec<bool> = (0..64).map(|_| rng.random_bool(dp)).collect();
        let truth: Vec<bool> = (0..64).map(|_| rng.random_bool(dt)).collect();
        let c = |p: bool, t: bool| pred.iter().zip(&truth).filter(|&(&a, &b)| a == p && b == t).count() as f64;
        let (tp, fp, tn, fnn) = (c(true, true), c(true, false), c(false, false), c(false, true));
        let den = ((tp + fp) * (tp + fnn) * (tn + fp) * (tn + fnn)).sqrt();
        let want = (den > 0.0).then(|| (tp * tn - fp * fnn) / den);
        let got = Confusion::from_masks(&pred, &truth).mcc();
        match (got, want) {
            (Some(g), Some(w)) => {
                ensure!((g - w).abs() <= 1e-12, "pair {pair}: mcc {g} vs {w}");
                defined += 1;
            }
            (None, None) => {}
            _ => return Err(format!("pair {pair}: mcc {got:?} vs {want:?}")),
        }
    }
    Ok(format!("200 AUC sets exact, {defined}/200 MCC pairs defined and within 1e-12"))
}

// ---------------------------------------------------------------------------

const INPAINT_REFS: usize = 100;
const FULL_MASK_REFS: usize = 25;

fn inpainting_invariant() -> Result<String, String> {
    let cfg = DiffusionConfig { base_channels: 4, channel_mult: vec![1, 2], ..DiffusionConfig::toy(6, 1) };
    let st = randomized::<f32>(cfg, 3, 0.2);
    let sch = NoiseSchedule::<f32>::build(200, ScheduleKind::Linear).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut masked_px = 0usize;
    for k in 0..INPAINT_REFS {
        let t = procedural_tile(k as u64, coord(k, 0), 64, 16).map_err(|e| e.to_string())?;
        let reference = Image::<f32>::from_rgb8(&t.satellite);
        let basemap = Image::<f32>::from_rgb8(&t.basemap);
        let cond = Conditioning::new(Some(&basemap), Some(0));
        let opts = SampleOptions::new(k as u64);

        let density = rng.random_range(0.02..0.6);
        let mask = Bitmap { width: 64, height: 64, bits: (0..64 * 64).map(|_| rng.random_bool(density)).collect() };
        let out = inpaint(&st, &sch, &reference, &cond, &mask, &opts).map_err(|e| e.to_string())?;
        for c in 0..3 {
            for (i, &m) in mask.bits.iter().enumerate() {
                ensure!(
                    m || out.image.channel(c)[i].to_bits() == reference.channel(c)[i].to_bits(),
                    "ref {k}: pixel {i} channel {c} changed outside the mask"
                );
            }
        }
        masked_px += mask.count();

        let empty = inpaint(&st, &sch, &reference, &cond, &Bitmap::new(64, 64), &opts).map_err(|e| e.to_string())?;
        ensure!(empty.empty_mask && empty.image == reference, "ref {k}: empty mask is not the identity");

        if k < FULL_MASK_REFS {
            let full = inpaint(&st, &sch, &reference, &cond, &Bitmap::full(64, 64), &opts).map_err(|e| e.to_string())?;
            let plain = sample(&st, &sch, &cond, &opts).map_err(|e| e.to_string())?;
            ensure!(full.image == plain, "ref {k}: full mask differs from unmasked sampling");
        }
    }
    Ok(format!(
        "{INPAINT_REFS} refs bit-exact outside {masked_px} masked px, empty mask identity on all, \
         full mask == sample on the first {FULL_MASK_REFS}; 64 px, T=200"
    ))
}

// ---------------------------------------------------------------------------

fn cfg_identities() -> Result<String, String> {
    let st = randomized::<f32>(DiffusionConfig::micro(6, 3), 7, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f32;
    for trial in 0..10 {
        let x = random_image::<f32>(&mut rng, 3, 32);
        let b = random_image::<f32>(&mut rng, 3, 32);
        let t = rng.random_range(0..1000);
        let cond = Conditioning::new(Some(&b), Some(trial % 3));
        let c = st.forward(&x, t, &cond).map_err(|e| e.to_string())?;
        let u = st.forward(&x, t, &cond.nulled()).map_err(|e| e.to_string())?;
        ensure!(c != u, "trial {trial}: conditional and null passes coincide");
        let s0 = st.predict_eps(&x, t, &cond, 0.0).map_err(|e| e.to_string())?;
        let s1 = st.predict_eps(&x, t, &cond, 1.0).map_err(|e| e.to_string())?;
        ensure!(s0 == u, "trial {trial}: s=0 differs from the null pass");
        ensure!(s1 == c, "trial {trial}: s=1 differs from the conditional pass");
        let s2 = st.predict_eps(&x, t, &cond, 2.0).map_err(|e| e.to_string())?;
        for ((&s, &cv), &uv) in s2.data.iter().zip(&c.data).zip(&u.data) {
            worst = worst.max((s - (uv + 2.0 * (cv - uv))).abs());
        }
    }
    ensure!(worst <= 1e-6, "s=2 deviates from the linear combination by {worst:e}");
    Ok(format!("10 trials; s=0/s=1 bit-exact, s=2 max deviation {worst:e}"))
}

// ---------------------------------------------------------------------------

fn schedule_checks() -> Result<String, String> {
    for steps in [50, 200, 1000] {
        let sch = NoiseSchedule::<f64>::build(steps, ScheduleKind::Linear).map_err(|e| e.to_string())?;
        ensure!(
            sch.alpha_bars.windows(2).all(|w| w[1] < w[0]) && sch.alpha_bars.iter().all(|&a| a > 0.0 && a < 1.0),
            "alpha_bar not strictly decreasing in (0, 1) at T={steps}"
        );
    }
    let sch = NoiseSchedule::<f64>::build(1000, ScheduleKind::Linear).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x0 = random_image::<f64>(&mut rng, 3, 2);
    let n = 10_000;
    let mut worst_var = 0.0f64;
    for t in [50usize, 400, 900] {
        let mut sum = [0.0; 12];
        let mut sq = [0.0; 12];
        for _ in 0..n {
            let eps = Image::from_vec(3, 2, 2, (0..12).map(|_| standard_normal(&mut rng)).collect());
            let xt = sch.forward_noise(&x0, t, &eps).map_err(|e| e.to_string())?;
            for i in 0..12 {
                sum[i] += xt.data[i];
                sq[i] += xt.data[i] * xt.data[i];
            }
        }
        let expected = 1.0 - sch.alpha_bars[t];
        for i in 0..12 {
            let mean = sum[i] / n as f64;
            let var = (sq[i] - n as f64 * mean * mean) / (n as f64 - 1.0);
            let rel = (var - expected).abs() / expected;
            ensure!(rel <= 0.05, "t={t} pixel {i}: variance {var} vs {expected}");
            worst_var = worst_var.max(rel);
        }
    }

    let cfg = DiffusionConfig {
        resolution: 16,
        base_channels: 4,
        channel_mult: vec![1, 2],
        in_channels: 6,
        class_count: 3,
        aux_class_count: 0,
        cfg_dropout: 0.1,
    };
    let st = randomized::<f64>(cfg, 5, 0.3);
    let fsch = NoiseSchedule::<f64>::build(100, ScheduleKind::Linear).map_err(|e| e.to_string())?;
    let batch: Vec<TrainExample<f64>> = (0..2)
        .map(|i| TrainExample {
            image: random_image(&mut rng, 3, 16),
            basemap: Some(random_image(&mut rng, 3, 16)),
            class: Some(i),
            aux_class: None,
        })
        .collect();
    let prepared = st.prepare_batch(&batch, &fsch, &mut rng).map_err(|e| e.to_string())?;
    let mut grad = vec![0.0; st.param_count()];
    st.loss_and_grad(&prepared, &mut grad);
    let h = 1e-5;
    let mut probe = st.clone();
    let mut worst_fd = 0.0f64;
    for _ in 0..64 {
        let i = rng.random_range(0..st.param_count());
        probe.params[i] = st.params[i] + h;
        let up = probe.loss(&prepared);
        probe.params[i] = st.params[i] - h;
        let down = probe.loss(&prepared);
        probe.params[i] = st.params[i];
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
        ensure!(rel < 1e-3, "param {i}: finite difference {fd} vs backprop {}", grad[i]);
        worst_fd = worst_fd.max(rel);
    }
    Ok(format!(
        "alpha_bar monotone at T=50/200/1000; MC variance within {:.2}% at t=50/400/900; \
         64 FD probes, worst relative error {worst_fd:.1e}",
        worst_var * 100.0
    ))
}

// ---------------------------------------------------------------------------

fn toy_overfit() -> Result<String, String> {
    let cfg = DiffusionConfig { base_channels: 8, channel_mult: vec![1, 2, 2], ..DiffusionConfig::toy(6, 1) };
    let mut st = ModelState::<f32>::new(cfg, 0).map_err(|e| e.to_string())?;
    let sch = NoiseSchedule::<f32>::build(200, ScheduleKind::Linear).map_err(|e| e.to_string())?;
    let base = GeoCoordinate::new(50.85, 4.35).unwrap();
    let pairs: Vec<_> = (0..8)
        .map(|i| procedural_tile(1, base.offset_pixels(200.0 * i as f64, 0.0, 16), 64, 16))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let data: Vec<TrainExample<f32>> = pairs
        .iter()
        .map(|p| TrainExample {
            image: Image::from_rgb8(&p.satellite),
            basemap: Some(Image::from_rgb8(&p.basemap)),
            class: Some(0),
            aux_class: None,
        })
        .collect();
    let iterations = 300;
    let opts = TrainOptions { iterations, batch_size: 4, optimizer: AdamConfig::with_lr(2e-3), flips: false, seed: 0 };
    let mut losses = Vec::new();
    train(&mut st, &sch, &data, &opts, |_, l| {
        losses.push(l);
        true
    })
    .map_err(|e| e.to_string())?;
    let mut matched = 0;
    for (i, d) in data.iter().enumerate() {
        let cond = Conditioning::new(d.basemap.as_ref(), Some(0));
        let out = sample(&st, &sch, &cond, &SampleOptions::new(i as u64)).map_err(|e| e.to_string())?;
        let maes: Vec<f32> = data
            .iter()
            .map(|e| out.data.iter().zip(&e.image.data).map(|(a, b)| (a - b).abs()).sum::<f32>() / out.data.len() as f32)
            .collect();
        let best = maes.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        matched += (best == i) as usize;
    }
    let mean = |s: &[f32]| s.iter().sum::<f32>() / s.len() as f32;
    let (first, last) = (mean(&losses[..10]), mean(&losses[losses.len() - 10..]));
    ensure!(matched >= 7, "only {matched}/8 samples are closest to their own satellite tile");
    Ok(format!("{matched}/8 matched after {iterations} iterations (loss {first:.3} -> {last:.3})"))
}

// ---------------------------------------------------------------------------

const TRAIN_CITIES: [&str; 3] = ["brussels", "lisbon", "osaka"];
const TEST_CITIES: [&str; 2] = ["lima", "tunis"];
const N_TRAIN: usize = 3000;
const N_TEST: usize = 300;

struct Built {
    _dir: tempfile::TempDir,
    root: PathBuf,
    train: DatasetManifest,
    rebuilt_digest: String,
    test: DatasetManifest,
    leakage_rejected: bool,
}

fn tiny_model(in_channels: usize, aux: usize, seed: u64, names: &[String]) -> GenerativeModel<f32> {
    let cfg = DiffusionConfig {
        resolution: 32,
        base_channels: 4,
        channel_mult: vec![1, 2],
        in_channels,
        class_count: names.len() + 1,
        aux_class_count: 0,
        cfg_dropout: 0.1,
    }
    .with_aux_classes(aux);
    GenerativeModel::new(&format!("tiny-{in_channels}-{seed}"), randomized(cfg, seed, 0.2), 4, names.to_vec()).unwrap()
}

fn store_city(root: &Path, city: &str, lane: usize, per: usize) {
    let store = TileStore::new(root);
    for k in 0..per {
        let mut t = procedural_tile((lane * 100_000 + k) as u64, coord(k, lane), 32, 16).unwrap();
        t.city = city.to_string();
        store.save(&t).unwrap();
    }
}

fn build_datasets() -> Result<Built, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().to_path_buf();
    let per_train = N_TRAIN.div_ceil(TRAIN_CITIES.len());
    for (lane, city) in TRAIN_CITIES.iter().enumerate() {
        store_city(&root, city, lane, per_train);
    }
    for (lane, city) in TEST_CITIES.iter().enumerate() {
        store_city(&root, city, lane + TRAIN_CITIES.len(), N_TEST);
    }
    let names: Vec<String> = TRAIN_CITIES.iter().chain(&TEST_CITIES).map(|s| s.to_string()).collect();
    let source = SourceTag::procedural(16);
    let roster: ModelRoster<f32> = [(
        source,
        ModelBundle { image: tiny_model(6, 0, 1, &names), basemap: tiny_model(3, 2, 2, &names) },
    )]
    .into_iter()
    .collect();

    let train_pool = load_pool(&root, &TRAIN_CITIES.map(String::from), &[source]).map_err(|e| e.to_string())?;
    let cfg = BuildConfig { p_pristine: 0.5, ..BuildConfig::new(Split::Train, N_TRAIN, 2024) };
    let train = build_split(&root, &train_pool, &roster, &cfg).map_err(|e| e.to_string())?;
    let again = build_split(&root, &train_pool, &roster, &BuildConfig { overwrite: true, ..cfg.clone() })
        .map_err(|e| e.to_string())?;

    let leaky_pool = load_pool(&root, &["lisbon".to_string(), "lima".to_string()], &[source]).map_err(|e| e.to_string())?;
    let leak = build_split(&root, &leaky_pool, &roster, &BuildConfig::new(Split::Test, 10, 1));
    let leakage_rejected = matches!(leak, Err(DatasetError::Leakage { .. }));

    let test_pool = load_pool(&root, &TEST_CITIES.map(String::from), &[source]).map_err(|e| e.to_string())?;
    let test = build_split(&root, &test_pool, &roster, &BuildConfig::new(Split::Test, N_TEST, 7))
        .map_err(|e| e.to_string())?;
    Ok(Built { _dir: dir, root, rebuilt_digest: again.digest(), train, test, leakage_rejected })
}

fn datasets() -> Result<&'static Built, String> {
    static BUILT: OnceLock<Result<Built, String>> = OnceLock::new();
    BUILT.get_or_init(build_datasets).as_ref().map_err(|e| format!("dataset build failed: {e}"))
}

fn dataset_statistics() -> Result<String, String> {
    let b = datasets()?;
    let m = &b.train;
    let n = m.records.len();
    ensure!(n == N_TRAIN, "{n} records instead of {N_TRAIN}");
    let count = |t: ImageType| m.records.iter().filter(|r| r.image_type == t).count();
    let (p, f, q) = (count(ImageType::Pristine), count(ImageType::FullySynthetic), count(ImageType::PartiallyManipulated));
    let band = |k: usize, total: usize, prob: f64, what: &str| {
        three_sigma(k as f64, total as f64 * prob, (total as f64 * prob * (1.0 - prob)).sqrt(), what)
    };
    band(p, n, 0.5, "pristine")?;
    band(f, n, 0.25, "fully synthetic")?;
    band(q, n, 0.25, "partially manipulated")?;
    let header = &m.header.counts;
    ensure!(
        (header.pristine, header.fully_synthetic, header.partially_manipulated, header.total) == (p, f, q, n),
        "header counts {header:?} disagree with the records"
    );
    let mut modes = Vec::new();
    for mode in BasemapMode::ALL {
        let k = m.records.iter().filter(|r| r.basemap_mode == Some(mode)).count();
        band(k, f, 1.0 / 3.0, &format!("basemap mode {mode:?}"))?;
        modes.push(k);
    }

    let train_cities: BTreeSet<&str> = m.records.iter().map(|r| r.city.as_str()).collect();
    let test_cities: BTreeSet<&str> = b.test.records.iter().map(|r| r.city.as_str()).collect();
    ensure!(train_cities.is_disjoint(&test_cities), "cities shared: {:?}", train_cities.intersection(&test_cities));
    ensure!(b.leakage_rejected, "a test split reusing a train city was not rejected");
    for (name, man) in [("train", m), ("test", &b.test)] {
        let report = validate_manifest(man, &b.root);
        ensure!(report.ok(), "{name} split validation: {:?}", report.violations.first());
    }
    ensure!(b.rebuilt_digest == m.digest(), "rebuild digest {} vs {}", b.rebuilt_digest, m.digest());
    Ok(format!(
        "n={n}: pristine {p}, fully {f}, partially {q}; modes {modes:?}; cities disjoint; digest {}",
        &m.digest()[..16]
    ))
}

// ---------------------------------------------------------------------------

fn mask_budget() -> Result<String, String> {
    let table = |a: f64| -> Option<SizeClass> {
        if a <= 0.0 || a > 0.20 {
            None
        } else if a <= 0.02 {
            Some(SizeClass::XSmall)
        } else if a <= 0.05 {
            Some(SizeClass::Small)
        } else if a <= 0.10 {
            Some(SizeClass::Medium)
        } else {
            Some(SizeClass::Large)
        }
    };
    for a in [0.0, 1e-9, 0.0199, 0.02, 0.0201, 0.05, 0.0500001, 0.1, 0.10001, 0.2, 0.2000001, 1.0] {
        ensure!(size_class(a).ok() == table(a), "size_class({a}) = {:?}, table says {:?}", size_class(a).ok(), table(a));
    }
    let size = 64;
    let limit = 0.20 + 1.0 / (size * size) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut by_class = [0usize; 4];
    for i in 0..1000u64 {
        let (lo, hi) = SizeClass::ALL[i as usize % 4].bounds();
        let target = rng.random_range(lo.max(0.01)..=hi);
        let m = bezier_mask(size, target, i).map_err(|e| format!("bezier {i} (target {target:.4}): {e}"))?;
        ensure!(m.area_fraction <= limit, "bezier {i}: area {}", m.area_fraction);
        ensure!(m.bitmap.fraction() == m.area_fraction, "bezier {i}: recorded area is stale");
        ensure!(Some(m.size_class) == table(m.area_fraction), "bezier {i}: bucket {:?} for {}", m.size_class, m.area_fraction);
        let (_, sizes) = connected_components(&m.bitmap);
        ensure!(sizes.len() == 1, "bezier {i}: {} components", sizes.len());
        by_class[SizeClass::ALL.iter().position(|&c| c == m.size_class).unwrap()] += 1;
    }
    let building = LayerPalette::default().color(Layer::Buildings);
    let mut failures = 0;
    let mut largest = 0.0f64;
    for i in 0..1000u64 {
        let t = procedural_tile(i, coord(i as usize, 7), size, 16).map_err(|e| e.to_string())?;
        let fp = Bitmap { width: size, height: size, bits: t.basemap.pixels().map(|p| *p == building).collect() };
        let seeds = (!fp.none_set()).then_some(&fp);
        match grabcut_mask(&t.satellite, seeds, i) {
            Ok(m) => {
                ensure!(m.generator == MaskGenerator::GrabCut, "grabcut {i}: generator {:?}", m.generator);
                ensure!(m.area_fraction <= limit, "grabcut {i}: area {}", m.area_fraction);
                ensure!(Some(m.size_class) == table(m.area_fraction), "grabcut {i}: bucket {:?}", m.size_class);
                largest = largest.max(m.area_fraction);
            }
            Err(_) => failures += 1,
        }
    }
    ensure!(failures == 0, "{failures}/1000 GrabCut masks failed");
    Ok(format!(
        "1000 bezier (buckets {by_class:?}, all single-component) + 1000 GrabCut (max area {largest:.4}), all <= 0.20 + 1 px"
    ))
}

// ---------------------------------------------------------------------------

/// Separates the classes perfectly but reports a threshold above every score.
struct Shifted;

impl DetectorAdapter for Shifted {
    fn name(&self) -> &str {
        "shifted"
    }
    fn role(&self) -> AdapterRole {
        AdapterRole::Both
    }
    fn original_threshold(&self) -> f64 {
        10.0
    }
    fn score(&self, item: &BenchItem) -> Result<f64, String> {
        Ok(match item.record.image_type {
            ImageType::Pristine => 0.0,
            ImageType::FullySynthetic => 1.0,
            ImageType::PartiallyManipulated => 2.0,
        })
    }
}

fn harness_end_to_end() -> Result<String, String> {
    let b = datasets()?;
    let m = &b.train;
    let detectors: Vec<Box<dyn DetectorAdapter>> = vec![
        Box::new(OracleDetector::new(AdapterRole::Both)),
        Box::new(RandomDetector::new(AdapterRole::Both, 1)),
        Box::new(RandomDetector::new(AdapterRole::Both, 2)),
        Box::new(Shifted),
    ];
    let localizers: Vec<Box<dyn LocalizerAdapter>> =
        vec![Box::new(OracleLocalizer { inverted: false }), Box::new(RandomLocalizer { seed: 3 })];
    let report = evaluate(m, &b.root, &detectors, &localizers, &EvalConfig::default());
    ensure!(report.errors.is_empty(), "adapter errors: {:?}", report.errors.first());

    let labels_for = |task: BinaryTask| -> (f64, f64) {
        let subset: Vec<bool> = m.records.iter().filter_map(|r| task.label(r.image_type)).collect();
        let pos = subset.iter().filter(|&&l| l).count() as f64;
        (pos, subset.len() as f64 - pos)
    };
    for task in BinaryTask::ALL {
        let o = report.binary_result("oracle-both", task).ok_or(format!("no oracle result for {task}"))?;
        ensure!(o.auc == 1.0, "oracle AUC {} on {task}", o.auc);
        let (p, q) = labels_for(task);
        let sigma = ((p + q + 1.0) / (12.0 * p * q)).sqrt();
        for name in ["random-both-1", "random-both-2"] {
            let r = report.binary_result(name, task).ok_or(format!("no {name} result for {task}"))?;
            three_sigma(r.auc, 0.5, sigma, &format!("{name} AUC on {task}"))?;
        }
        let s = report.binary_result("shifted", task).ok_or(format!("no shifted result for {task}"))?;
        ensure!(s.acc_original == 0.5 && s.acc_calibrated == 1.0, "shifted on {task}: {s:?}");
        for e in report.binary.iter().filter(|e| e.task == task) {
            let r = e.outcome.result().ok_or(format!("{} on {task} not evaluated", e.adapter))?;
            ensure!(r.acc_calibrated >= r.acc_original, "{} on {task}: calibrated {} < {}", e.adapter, r.acc_calibrated, r.acc_original);
        }
    }
    for e in report.three_way.iter().filter(|e| e.detector == "oracle-both" && e.splicer == "oracle-both") {
        let r = e.outcome.result().ok_or("oracle three-way not evaluated")?;
        ensure!(r.mean_accuracy == 1.0, "oracle three-way {:?}: {}", e.strategy, r.mean_accuracy);
    }
    let loc = |name: &str| report.localization.entries.iter().find(|e| e.localizer == name);
    let oracle = loc("oracle-mask").ok_or("no oracle localizer entry")?;
    for o in [&oracle.calibrated, &oracle.fixed] {
        let r = o.result().ok_or("oracle localization not evaluated")?;
        ensure!(r.scores.overall == 1.0, "oracle MCC {}", r.scores.overall);
    }
    let random = loc("random-map").ok_or("no random localizer entry")?;
    let r = random.fixed.result().ok_or("random localization not evaluated")?;
    let images = (r.uninverted.images - r.uninverted.degenerate) as f64;
    let px = (32 * 32) as f64;
    three_sigma(r.uninverted.overall, 0.0, 1.0 / (px * images).sqrt(), "random localizer MCC")?;

    // chance for the three-way strategies needs the adapters' own thresholds
    let raw = evaluate(m, &b.root, &detectors[1..3], &[], &EvalConfig { calibrate_three_way: false, ..EvalConfig::default() });
    let per_class = [ImageType::Pristine, ImageType::FullySynthetic, ImageType::PartiallyManipulated]
        .map(|t| m.records.iter().filter(|r| r.image_type == t).count() as f64);
    let mut chance = Vec::new();
    for e in raw.three_way.iter().filter(|e| e.detector == "random-both-1" && e.splicer == "random-both-2") {
        let r = e.outcome.result().ok_or("random three-way not evaluated")?;
        let hit = match e.strategy {
            Strategy::DetectorFirst => [0.5, 0.25, 0.25],
            Strategy::SplicerFirst => [0.25, 0.25, 0.5],
        };
        let var: f64 = hit.iter().zip(&per_class).map(|(p, n)| p * (1.0 - p) / n).sum::<f64>() / 9.0;
        three_sigma(r.mean_accuracy, 1.0 / 3.0, var.sqrt(), &format!("random three-way {:?}", e.strategy))?;
        chance.push(r.mean_accuracy);
    }
    ensure!(chance.len() == 2, "expected both strategies for the random pair, got {}", chance.len());
    Ok(format!(
        "oracle AUC/3-way/MCC all 1.0; random AUCs, 3-way {chance:.3?} and MCC {:.4} at chance; shifted 0.50 -> 1.00",
        r.uninverted.overall
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let checks: [(&str, Duration, Check); 8] = [
        ("metric oracles", Duration::from_secs(60), metric_oracles),
        ("inpainting invariant", Duration::from_secs(300), inpainting_invariant),
        ("cfg identities", Duration::MAX, cfg_identities),
        ("schedule and forward process", Duration::MAX, schedule_checks),
        ("toy overfit generation", Duration::from_secs(30 * 60), toy_overfit),
        ("dataset statistics", Duration::MAX, dataset_statistics),
        ("mask budget", Duration::MAX, mask_budget),
        ("harness end-to-end", Duration::MAX, harness_end_to_end),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut out = std::io::stdout().lock();
    for (name, budget, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > budget => Err(format!("{detail}; took {took:.1?}, budget {budget:?}")),
            r => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += result.is_err() as usize;
        writeln!(out, "{tag} {name}: {detail} [{:.1}s]", took.as_secs_f64()).unwrap();
        out.flush().unwrap();
    }
    if failed > 0 {
        writeln!(out, "{failed} acceptance criteria failed").unwrap();
        std::process::exit(1);
    }
}
