//! Iterated graph-cut segmentation with Gaussian-mixture color models.
//!
//! Each round re-fits a foreground and a background GMM to the current
//! labelling, sets unary costs to the negative log-likelihoods, adds
//! contrast-sensitive pairwise costs over the 8-neighbourhood, and relabels
//! the undecided pixels with a minimum s-t cut.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::maxflow::MaxFlow;
use super::{Mask, MaskError, MaskGenerator, MAX_AREA_FRACTION};
use crate::image::Bitmap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trimap {
    Background,
    ProbablyBackground,
    ProbablyForeground,
    Foreground,
}

impl Trimap {
    fn fixed(self) -> bool {
        matches!(self, Trimap::Background | Trimap::Foreground)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrabCutParams {
    pub iterations: usize,
    pub components: usize,
    pub gamma: f64,
    /// Ring (in pixels) around footprints left undecided so the cut can grow
    /// past the seed.
    pub footprint_band: usize,
}

impl Default for GrabCutParams {
    fn default() -> Self {
        Self { iterations: 5, components: 5, gamma: 50.0, footprint_band: 4 }
    }
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub foreground: Bitmap,
    /// Foreground-vs-background log-likelihood ratio per pixel.
    pub confidence: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Gaussian {
    weight: f64,
    mean: [f64; 3],
    inv_cov: [[f64; 3]; 3],
    log_norm: f64,
}

#[derive(Debug, Clone)]
struct Gmm {
    comps: Vec<Gaussian>,
}

const COV_REG: f64 = 1e-4;

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inv3(m: &[[f64; 3]; 3], det: f64) -> [[f64; 3]; 3] {
    let mut r = [[0.0; 3]; 3];
    r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    r
}

impl Gaussian {
    fn fit(samples: &[[f64; 3]], total: usize) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let mut mean = [0.0; 3];
        for s in samples {
            for c in 0..3 {
                mean[c] += s[c] / n;
            }
        }
        let mut cov = [[0.0; 3]; 3];
        for s in samples {
            for i in 0..3 {
                for j in 0..3 {
                    cov[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]) / n;
                }
            }
        }
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] += COV_REG;
        }
        let det = det3(&cov).max(1e-300);
        Some(Self {
            weight: n / total as f64,
            mean,
            inv_cov: inv3(&cov, det),
            log_norm: -0.5 * (det.ln() + 3.0 * (2.0 * std::f64::consts::PI).ln()),
        })
    }

    fn log_pdf(&self, z: &[f64; 3]) -> f64 {
        let d = [z[0] - self.mean[0], z[1] - self.mean[1], z[2] - self.mean[2]];
        let mut q = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                q += d[i] * self.inv_cov[i][j] * d[j];
            }
        }
        self.log_norm - 0.5 * q
    }
}

impl Gmm {
    /// Negative log-likelihood under the mixture.
    fn cost(&self, z: &[f64; 3]) -> f64 {
        let logs: Vec<f64> = self.comps.iter().map(|g| g.weight.ln() + g.log_pdf(z)).collect();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        -(m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln())
    }

    fn best_component(&self, z: &[f64; 3]) -> usize {
        self.comps
            .iter()
            .enumerate()
            .map(|(i, g)| (i, g.weight.ln() + g.log_pdf(z)))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
            .0
    }

    fn fit(samples: &[[f64; 3]], assign: &[usize], k: usize) -> Self {
        let mut groups: Vec<Vec<[f64; 3]>> = vec![Vec::new(); k];
        for (s, &a) in samples.iter().zip(assign) {
            groups[a].push(*s);
        }
        let comps: Vec<Gaussian> = groups.iter().filter_map(|g| Gaussian::fit(g, samples.len())).collect();
        Self { comps }
    }

    /// k-means initialization from a seeded draw of centers.
    fn init(samples: &[[f64; 3]], k: usize, rng: &mut ChaCha8Rng) -> (Self, Vec<usize>) {
        let k = k.min(samples.len()).max(1);
        let mut centers: Vec<[f64; 3]> = (0..k).map(|_| samples[rng.random_range(0..samples.len())]).collect();
        let mut assign = vec![0usize; samples.len()];
        for _ in 0..8 {
            for (a, s) in assign.iter_mut().zip(samples) {
                *a = (0..k)
                    .map(|c| (c, dist2(s, &centers[c])))
                    .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
                    .0;
            }
            let mut sums = vec![[0.0; 3]; k];
            let mut counts = vec![0usize; k];
            for (s, &a) in samples.iter().zip(&assign) {
                counts[a] += 1;
                for c in 0..3 {
                    sums[a][c] += s[c];
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centers[c] = [
                        sums[c][0] / counts[c] as f64,
                        sums[c][1] / counts[c] as f64,
                        sums[c][2] / counts[c] as f64,
                    ];
                }
            }
        }
        (Self::fit(samples, &assign, k), assign)
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn pixels(img: &RgbImage) -> Vec<[f64; 3]> {
    img.pixels()
        .map(|p| [p.0[0] as f64 / 255.0, p.0[1] as f64 / 255.0, p.0[2] as f64 / 255.0])
        .collect()
}

/// Neighbour offsets covering each undirected 8-neighbour pair once.
const PAIRS: [(isize, isize, f64); 4] = [(1, 0, 1.0), (0, 1, 1.0), (1, 1, std::f64::consts::FRAC_1_SQRT_2), (-1, 1, std::f64::consts::FRAC_1_SQRT_2)];

pub fn grabcut_segment(
    img: &RgbImage,
    trimap: &[Trimap],
    params: &GrabCutParams,
    rng: &mut ChaCha8Rng,
) -> Result<Segmentation, MaskError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if trimap.len() != w * h {
        return Err(MaskError::Shape(format!("trimap of {} for {w}x{h} image", trimap.len())));
    }
    let z = pixels(img);
    let n = w * h;

    // pairwise weights
    let mut sum_sq = 0.0;
    let mut pairs = 0usize;
    let neighbour = |i: usize, dx: isize, dy: isize| -> Option<usize> {
        let (x, y) = ((i % w) as isize + dx, (i / w) as isize + dy);
        (x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h).then(|| y as usize * w + x as usize)
    };
    for i in 0..n {
        for &(dx, dy, _) in &PAIRS {
            if let Some(j) = neighbour(i, dx, dy) {
                sum_sq += dist2(&z[i], &z[j]);
                pairs += 1;
            }
        }
    }
    let beta = if sum_sq > 0.0 { pairs as f64 / (2.0 * sum_sq) } else { 0.0 };
    let mut edges = Vec::with_capacity(pairs);
    for i in 0..n {
        for &(dx, dy, dist) in &PAIRS {
            if let Some(j) = neighbour(i, dx, dy) {
                edges.push((i, j, params.gamma * dist * (-beta * dist2(&z[i], &z[j])).exp()));
            }
        }
    }
    let hard = 1.0 + 8.0 * params.gamma;

    let mut fg: Vec<bool> = trimap
        .iter()
        .map(|t| matches!(t, Trimap::Foreground | Trimap::ProbablyForeground))
        .collect();
    let mut confidence = vec![0.0; n];
    for _ in 0..params.iterations.max(1) {
        let fg_samples: Vec<[f64; 3]> = (0..n).filter(|&i| fg[i]).map(|i| z[i]).collect();
        let bg_samples: Vec<[f64; 3]> = (0..n).filter(|&i| !fg[i]).map(|i| z[i]).collect();
        if fg_samples.is_empty() {
            break;
        }
        if bg_samples.is_empty() {
            return Err(MaskError::Shape("segmentation has no background pixels".into()));
        }
        let (fg_gmm, fg_assign) = Gmm::init(&fg_samples, params.components, rng);
        let (bg_gmm, bg_assign) = Gmm::init(&bg_samples, params.components, rng);
        // one refinement: reassign each pixel to its most likely component
        let fg_assign: Vec<usize> = fg_samples.iter().zip(&fg_assign).map(|(s, _)| fg_gmm.best_component(s)).collect();
        let bg_assign: Vec<usize> = bg_samples.iter().zip(&bg_assign).map(|(s, _)| bg_gmm.best_component(s)).collect();
        let fg_gmm = Gmm::fit(&fg_samples, &fg_assign, fg_gmm.comps.len());
        let bg_gmm = Gmm::fit(&bg_samples, &bg_assign, bg_gmm.comps.len());

        let source = n;
        let sink = n + 1;
        let mut graph = MaxFlow::with_capacity(n + 2, edges.len() + 2 * n);
        for i in 0..n {
            let (cf, cb) = (fg_gmm.cost(&z[i]), bg_gmm.cost(&z[i]));
            confidence[i] = cb - cf;
            let (to_source, to_sink) = match trimap[i] {
                Trimap::Foreground => (hard, 0.0),
                Trimap::Background => (0.0, hard),
                _ => {
                    // shift so both capacities are non-negative
                    let m = cf.min(cb);
                    (cb - m, cf - m)
                }
            };
            if to_source > 0.0 {
                graph.add_edge(source, i, to_source, 0.0);
            }
            if to_sink > 0.0 {
                graph.add_edge(i, sink, to_sink, 0.0);
            }
        }
        for &(i, j, wgt) in &edges {
            graph.add_edge(i, j, wgt, wgt);
        }
        graph.solve(source, sink);
        let side = graph.source_side(source);
        let next: Vec<bool> = (0..n)
            .map(|i| if trimap[i].fixed() { trimap[i] == Trimap::Foreground } else { side[i] })
            .collect();
        let converged = next == fg;
        fg = next;
        if converged {
            break;
        }
    }
    Ok(Segmentation {
        foreground: Bitmap { width: w, height: h, bits: fg },
        confidence,
    })
}

/// Drops the lowest-confidence foreground pixels (ties by raster index)
/// until at most `max_pixels` remain.
pub fn cap_by_confidence(seg: &Bitmap, confidence: &[f64], max_pixels: usize) -> Bitmap {
    let mut on: Vec<usize> = (0..seg.bits.len()).filter(|&i| seg.bits[i]).collect();
    if on.len() <= max_pixels {
        return seg.clone();
    }
    on.sort_by(|&a, &b| confidence[a].total_cmp(&confidence[b]).then(a.cmp(&b)));
    let mut out = seg.clone();
    for &i in &on[..on.len() - max_pixels] {
        out.bits[i] = false;
    }
    out
}

/// GrabCut mask seeded from building footprints when given, otherwise from a
/// random rectangle; capped at 20% of the image.
pub fn grabcut_mask(satellite: &RgbImage, footprints: Option<&Bitmap>, seed: u64) -> Result<Mask, MaskError> {
    grabcut_mask_with(satellite, footprints, seed, &GrabCutParams::default())
}

pub fn grabcut_mask_with(
    satellite: &RgbImage,
    footprints: Option<&Bitmap>,
    seed: u64,
    params: &GrabCutParams,
) -> Result<Mask, MaskError> {
    let (w, h) = (satellite.width() as usize, satellite.height() as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trimap: Vec<Trimap> = match footprints {
        Some(fp) => {
            if (fp.width, fp.height) != (w, h) {
                return Err(MaskError::Shape(format!(
                    "footprints {}x{} vs image {w}x{h}",
                    fp.width, fp.height
                )));
            }
            if fp.none_set() {
                return Err(MaskError::EmptyFootprint);
            }
            let band = fp.dilate(params.footprint_band);
            (0..w * h)
                .map(|i| {
                    if fp.bits[i] {
                        Trimap::ProbablyForeground
                    } else if band.bits[i] {
                        Trimap::ProbablyBackground
                    } else {
                        Trimap::Background
                    }
                })
                .collect()
        }
        None => {
            let rw = ((rng.random_range(0.15..0.4) * w as f64) as usize).max(1);
            let rh = ((rng.random_range(0.15..0.4) * h as f64) as usize).max(1);
            let x0 = rng.random_range(0..=w - rw);
            let y0 = rng.random_range(0..=h - rh);
            (0..w * h)
                .map(|i| {
                    let (x, y) = (i % w, i / w);
                    if x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh {
                        Trimap::ProbablyForeground
                    } else {
                        Trimap::Background
                    }
                })
                .collect()
        }
    };
    let seg = grabcut_segment(satellite, &trimap, params, &mut rng)?;
    let cap = (MAX_AREA_FRACTION * (w * h) as f64).floor() as usize;
    let capped = cap_by_confidence(&seg.foreground, &seg.confidence, cap);
    if capped.none_set() {
        return Err(MaskError::EmptySegmentation);
    }
    Mask::from_bitmap(capped, MaskGenerator::GrabCut, seed)
}
