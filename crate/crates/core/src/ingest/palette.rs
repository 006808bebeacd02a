use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

pub const PALETTE_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Roads,
    Highways,
    Buildings,
    Greenspace,
    Water,
    Airports,
    Background,
}

impl Layer {
    /// Registration order; earlier layers win quantization ties.
    pub const ALL: [Layer; 7] = [
        Layer::Roads,
        Layer::Highways,
        Layer::Buildings,
        Layer::Greenspace,
        Layer::Water,
        Layer::Airports,
        Layer::Background,
    ];

    pub fn index(self) -> usize {
        Layer::ALL.iter().position(|&l| l == self).expect("layer registered")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPalette {
    pub version: String,
    pub colors: Vec<(Layer, [u8; 3])>,
}

impl Default for LayerPalette {
    fn default() -> Self {
        Self {
            version: PALETTE_VERSION.to_string(),
            colors: vec![
                (Layer::Roads, [255, 255, 255]),
                (Layer::Highways, [247, 160, 60]),
                (Layer::Buildings, [140, 140, 150]),
                (Layer::Greenspace, [120, 190, 110]),
                (Layer::Water, [90, 150, 220]),
                (Layer::Airports, [170, 120, 200]),
                (Layer::Background, [236, 228, 210]),
            ],
        }
    }
}

impl LayerPalette {
    pub fn color(&self, layer: Layer) -> Rgb<u8> {
        Rgb(self.colors.iter().find(|(l, _)| *l == layer).expect("layer in palette").1)
    }

    pub fn layer_of(&self, px: &Rgb<u8>) -> Option<Layer> {
        self.colors.iter().find(|(_, c)| *c == px.0).map(|(l, _)| *l)
    }

    pub fn contains(&self, px: &Rgb<u8>) -> bool {
        self.layer_of(px).is_some()
    }

    /// Nearest color by squared RGB distance; first registered wins ties.
    pub fn nearest(&self, px: &Rgb<u8>) -> (Layer, Rgb<u8>) {
        let d = |c: &[u8; 3]| -> u32 {
            (0..3).map(|i| (i32::from(px.0[i]) - i32::from(c[i])).pow(2) as u32).sum()
        };
        let mut best = &self.colors[0];
        for entry in &self.colors[1..] {
            if d(&entry.1) < d(&best.1) {
                best = entry;
            }
        }
        (best.0, Rgb(best.1))
    }

    pub fn pairwise_distinct(&self) -> bool {
        let n = self.colors.len();
        (0..n).all(|i| (i + 1..n).all(|j| self.colors[i].1 != self.colors[j].1))
    }
}

/// Maps every pixel to its nearest palette color, dropping labels, borders
/// and shading.
pub fn simplify_basemap(raw: &RgbImage, palette: &LayerPalette) -> RgbImage {
    let mut out = raw.clone();
    for px in out.pixels_mut() {
        *px = palette.nearest(px).1;
    }
    out
}

/// Number of pixels whose color is not a palette entry.
pub fn palette_violations(basemap: &RgbImage, palette: &LayerPalette) -> usize {
    basemap.pixels().filter(|p| !palette.contains(p)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn default_palette_is_distinct() {
        assert!(LayerPalette::default().pairwise_distinct());
    }

    #[test]
    fn pure_input_is_fixed_point() {
        let p = LayerPalette::default();
        let mut img = RgbImage::new(7, 1);
        for (i, l) in Layer::ALL.iter().enumerate() {
            img.put_pixel(i as u32, 0, p.color(*l));
        }
        assert_eq!(simplify_basemap(&img, &p), img);
    }

    #[test]
    fn uniform_gray_becomes_background() {
        let p = LayerPalette::default();
        let img = RgbImage::from_pixel(16, 16, Rgb([200, 200, 200]));
        let out = simplify_basemap(&img, &p);
        assert!(out.pixels().all(|px| *px == p.color(Layer::Background)));
    }

    #[test]
    fn noise_histogram_matches_brute_force() {
        let p = LayerPalette::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let img = RgbImage::from_fn(64, 64, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
        let out = simplify_basemap(&img, &p);
        let mut expected = [0usize; 7];
        let mut got = [0usize; 7];
        for (a, b) in img.pixels().zip(out.pixels()) {
            let mut best = (u32::MAX, 0usize);
            for (k, (_, c)) in p.colors.iter().enumerate() {
                let d: u32 = (0..3).map(|i| (a.0[i] as i32 - c[i] as i32).pow(2) as u32).sum();
                if d < best.0 {
                    best = (d, k);
                }
            }
            expected[best.1] += 1;
            got[p.layer_of(b).unwrap().index()] += 1;
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn equidistant_tie_goes_to_earlier_layer() {
        let p = LayerPalette {
            version: "t".into(),
            colors: vec![(Layer::Roads, [0, 0, 0]), (Layer::Water, [2, 0, 0])],
        };
        assert_eq!(p.nearest(&Rgb([1, 0, 0])).0, Layer::Roads);
    }

    proptest! {
        #[test]
        fn simplification_is_idempotent(pixels in proptest::collection::vec(any::<[u8; 3]>(), 64)) {
            let p = LayerPalette::default();
            let img = RgbImage::from_fn(8, 8, |x, y| Rgb(pixels[(y * 8 + x) as usize]));
            let once = simplify_basemap(&img, &p);
            prop_assert_eq!(palette_violations(&once, &p), 0);
            prop_assert_eq!(simplify_basemap(&once, &p), once);
        }
    }
}
