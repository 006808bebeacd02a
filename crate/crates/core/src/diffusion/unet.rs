//! Encoder–decoder denoiser with skip connections.
//!
//! ```text
//! x ─ conv_in ─ res[0] ─┬─ pool ─ res[1] ─┬─ ... ─ res[L-1] ─┬─ mid
//!                       │                 │                  │    │
//!   conv_out ─ up[0] ◄──┴── upsample ◄ up[1] ◄┴── ... ◄ up[L-1] ◄─┘
//! ```
//!
//! The timestep embedding (sinusoid → MLP) is summed with the location class
//! row and, when configured, an auxiliary class row; every residual block
//! receives the activated sum.

use super::config::DiffusionConfig;
use super::nn::{
    avg_pool2, avg_pool2_backward, silu, silu_grad, silu_image, upsample2, upsample2_backward, Conv2d, Init, Linear,
    ParamLayout, ParamSlot, ResBlock, ResCache,
};
use crate::image::Image;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    pub layout: ParamLayout,
    base_channels: usize,
    emb_dim: usize,
    time_in: Linear,
    time_out: Linear,
    class_table: ParamSlot,
    class_rows: usize,
    aux_table: Option<(ParamSlot, usize)>,
    conv_in: Conv2d,
    down: Vec<ResBlock>,
    mid: ResBlock,
    up: Vec<ResBlock>,
    conv_out: Conv2d,
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache<F> {
    time_feat: Vec<F>,
    time_pre: Vec<F>,
    time_act: Vec<F>,
    emb: Vec<F>,
    emb_act: Vec<F>,
    class: usize,
    aux: Option<usize>,
    conv_in_cols: Vec<F>,
    down: Vec<ResCache<F>>,
    skip_channels: Vec<usize>,
    mid: Option<ResCache<F>>,
    up: Vec<ResCache<F>>,
    head_pre: Image<F>,
    conv_out_cols: Vec<F>,
}

impl UNet {
    pub fn new(cfg: &DiffusionConfig) -> Self {
        let mut layout = ParamLayout::default();
        let c0 = cfg.base_channels;
        let emb_dim = cfg.embed_dim();
        let time_in = Linear::new(&mut layout, "time.0", c0, emb_dim);
        let time_out = Linear::new(&mut layout, "time.1", emb_dim, emb_dim);
        let class_table = layout.alloc("class_embedding", cfg.class_count * emb_dim, Init::Uniform(3f64.sqrt()));
        let aux_table = (cfg.aux_class_count > 0).then(|| {
            let slot = layout.alloc("aux_embedding", cfg.aux_class_count * emb_dim, Init::Uniform(3f64.sqrt()));
            (slot, cfg.aux_class_count)
        });
        let conv_in = Conv2d::new(&mut layout, "conv_in", cfg.in_channels, c0, 3, false);
        let mut down = Vec::new();
        let mut ch = c0;
        for (i, m) in cfg.channel_mult.iter().enumerate() {
            let out = c0 * m;
            down.push(ResBlock::new(&mut layout, &format!("down.{i}"), ch, out, emb_dim));
            ch = out;
        }
        let mid = ResBlock::new(&mut layout, "mid", ch, ch, emb_dim);
        let mut up = Vec::new();
        for (i, m) in cfg.channel_mult.iter().enumerate().rev() {
            let out = c0 * m;
            up.push(ResBlock::new(&mut layout, &format!("up.{i}"), ch + out, out, emb_dim));
            ch = out;
        }
        up.reverse();
        let conv_out = Conv2d::new(&mut layout, "conv_out", ch, 3, 3, true);
        Self {
            layout,
            base_channels: c0,
            emb_dim,
            time_in,
            time_out,
            class_table,
            class_rows: cfg.class_count,
            aux_table,
            conv_in,
            down,
            mid,
            up,
            conv_out,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    pub(crate) fn class_table_slot(&self) -> (ParamSlot, usize) {
        (self.class_table, self.class_rows)
    }

    fn timestep_features<F: Scalar>(&self, t: usize) -> Vec<F> {
        let half = self.base_channels / 2;
        let mut out = Vec::with_capacity(self.base_channels);
        let freqs: Vec<f64> = (0..half)
            .map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp())
            .collect();
        out.extend(freqs.iter().map(|f| F::lit((t as f64 * f).cos())));
        out.extend(freqs.iter().map(|f| F::lit((t as f64 * f).sin())));
        out
    }

    /// `class` and `aux` are resolved row indices (null rows included).
    pub fn forward<F: Scalar>(
        &self,
        p: &[F],
        x: &Image<F>,
        t: usize,
        class: usize,
        aux: Option<usize>,
    ) -> (Image<F>, ForwardCache<F>) {
        let e = self.emb_dim;
        let time_feat = self.timestep_features::<F>(t);
        let time_pre = self.time_in.forward(p, &time_feat);
        let time_act: Vec<F> = time_pre.iter().map(|&v| silu(v)).collect();
        let mut emb = self.time_out.forward(p, &time_act);
        let row = &self.class_table.of(p)[class * e..(class + 1) * e];
        emb.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
        if let (Some((slot, _)), Some(a)) = (&self.aux_table, aux) {
            let row = &slot.of(p)[a * e..(a + 1) * e];
            emb.iter_mut().zip(row).for_each(|(v, &b)| *v = *v + b);
        }
        let emb_act: Vec<F> = emb.iter().map(|&v| silu(v)).collect();

        let (mut h, conv_in_cols) = self.conv_in.forward(p, x);
        let levels = self.down.len();
        let mut skips = Vec::with_capacity(levels);
        let mut down_caches = Vec::with_capacity(levels);
        for (i, block) in self.down.iter().enumerate() {
            let (out, cache) = block.forward(p, h, &emb_act);
            down_caches.push(cache);
            h = if i + 1 < levels { avg_pool2(&out) } else { out.clone() };
            skips.push(out);
        }
        let (mut h, mid_cache) = self.mid.forward(p, h, &emb_act);
        let skip_channels: Vec<usize> = skips.iter().map(|s| s.channels).collect();
        let mut up_caches: Vec<Option<ResCache<F>>> = (0..levels).map(|_| None).collect();
        for i in (0..levels).rev() {
            let skip = skips.pop().expect("one skip per level");
            let (out, cache) = self.up[i].forward(p, h.concat_channels(&skip), &emb_act);
            up_caches[i] = Some(cache);
            h = if i > 0 { upsample2(&out) } else { out };
        }
        let (y, conv_out_cols) = self.conv_out.forward(p, &silu_image(&h));
        let cache = ForwardCache {
            time_feat,
            time_pre,
            time_act,
            emb,
            emb_act,
            class,
            aux,
            conv_in_cols,
            down: down_caches,
            skip_channels,
            mid: Some(mid_cache),
            up: up_caches.into_iter().map(|c| c.expect("filled")).collect(),
            head_pre: h,
            conv_out_cols,
        };
        (y, cache)
    }

    /// Accumulates `d loss / d params` into `g` given `d loss / d output`.
    pub fn backward<F: Scalar>(&self, p: &[F], g: &mut [F], mut cache: ForwardCache<F>, d_out: &Image<F>) {
        let e = self.emb_dim;
        let mut d_emb_act = vec![F::zero(); e];
        let mut dh = self.conv_out.backward(p, g, &cache.conv_out_cols, d_out);
        for (d, &h) in dh.data.iter_mut().zip(&cache.head_pre.data) {
            *d = *d * silu_grad(h);
        }
        let levels = self.up.len();
        let mut d_skips: Vec<Option<Image<F>>> = (0..levels).map(|_| None).collect();
        let mut up_caches: Vec<Option<ResCache<F>>> = cache.up.drain(..).map(Some).collect();
        for i in 0..levels {
            if i > 0 {
                dh = upsample2_backward(&dh);
            }
            let rc = up_caches[i].take().expect("cache per level");
            let d_cat = self.up[i].backward(p, g, rc, &dh, &cache.emb_act, &mut d_emb_act);
            let skip_c = cache.skip_channels[i];
            let main_c = d_cat.channels - skip_c;
            let n = d_cat.plane_len();
            d_skips[i] = Some(Image::from_vec(skip_c, d_cat.height, d_cat.width, d_cat.data[main_c * n..].to_vec()));
            dh = Image::from_vec(main_c, d_cat.height, d_cat.width, d_cat.data[..main_c * n].to_vec());
        }
        let mid = cache.mid.take().expect("mid cache");
        let mut dh = self.mid.backward(p, g, mid, &dh, &cache.emb_act, &mut d_emb_act);
        let mut down_caches: Vec<Option<ResCache<F>>> = cache.down.drain(..).map(Some).collect();
        for i in (0..levels).rev() {
            if i + 1 < levels {
                dh = avg_pool2_backward(&dh);
            }
            let ds = d_skips[i].take().expect("skip grad");
            dh.data.iter_mut().zip(&ds.data).for_each(|(a, &b)| *a = *a + b);
            let rc = down_caches[i].take().expect("cache per level");
            dh = self.down[i].backward(p, g, rc, &dh, &cache.emb_act, &mut d_emb_act);
        }
        // input gradient is not needed
        let _ = self.conv_in.backward(p, g, &cache.conv_in_cols, &dh);

        let d_emb: Vec<F> = d_emb_act.iter().zip(&cache.emb).map(|(&d, &v)| d * silu_grad(v)).collect();
        {
            let rows = self.class_table.of_mut(g);
            let row = &mut rows[cache.class * e..(cache.class + 1) * e];
            row.iter_mut().zip(&d_emb).for_each(|(a, &b)| *a = *a + b);
        }
        if let (Some((slot, _)), Some(a)) = (&self.aux_table, cache.aux) {
            let rows = slot.of_mut(g);
            rows[a * e..(a + 1) * e].iter_mut().zip(&d_emb).for_each(|(v, &b)| *v = *v + b);
        }
        let mut d_time_act = vec![F::zero(); e];
        self.time_out.backward(p, g, &cache.time_act, &d_emb, &mut d_time_act);
        let d_time_pre: Vec<F> = d_time_act
            .iter()
            .zip(&cache.time_pre)
            .map(|(&d, &v)| d * silu_grad(v))
            .collect();
        let mut sink = vec![F::zero(); cache.time_feat.len()];
        self.time_in.backward(p, g, &cache.time_feat, &d_time_pre, &mut sink);
    }
}
