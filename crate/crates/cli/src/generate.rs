use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use satsynth::diffusion::{Conditioning, SampleOptions};
use satsynth::image::{encode_png_rgb, load_mask_png, load_rgb_png, sha256_hex, write_atomic, Image};
use satsynth::ingest::{palette_violations, GeoCoordinate, LayerPalette, SourceTag, TilePair};
use satsynth::maskgen::{Mask, MaskGenerator};
use satsynth::pipelines::{
    derive_seed, generate_fully_synthetic, inpaint, paste_masked, two_stage_manipulate, BasemapMode, ManipulationClass, SynthOptions,
};
use serde::Serialize;

use crate::config::{ModelKind, RunConfig};
use crate::data::{ensure_tiles, load_model, load_optional, load_tiles};
use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct SampleArgs {
    pub city: String,
    pub count: usize,
    pub mode: Option<BasemapMode>,
    pub out: PathBuf,
    pub cfg_scale: f64,
    pub source: SourceTag,
}

#[derive(Debug, Clone, Serialize)]
pub struct Written {
    pub path: PathBuf,
    pub digest: String,
}

fn write_png(path: &Path, img: &RgbImage) -> Result<Written, CliError> {
    let bytes = encode_png_rgb(img);
    write_atomic(path, &bytes)?;
    Ok(Written { path: path.to_path_buf(), digest: sha256_hex(&bytes) })
}

/// Writes `count` fully synthetic images (plus basemaps and provenance) to
/// `out`. The default mode is `Generated` when a basemap model is present
/// and `None` otherwise.
pub fn sample(cfg: &RunConfig, args: &SampleArgs) -> Result<Vec<Written>, CliError> {
    let (img, _) = load_model(cfg, ModelKind::Image, args.source)?;
    let bm = load_optional(cfg, ModelKind::Basemap, args.source)?.map(|m| m.0);
    img.class_id(&args.city)?;
    let mode = args.mode.unwrap_or(if bm.is_some() { BasemapMode::Generated } else { BasemapMode::None });
    let refs = if mode == BasemapMode::Truth {
        let cities = [args.city.clone()];
        ensure_tiles(cfg, &cities, args.source, img.resolution())?;
        let tiles = load_tiles(cfg, &cities, args.source)?;
        if tiles.is_empty() {
            return Err(CliError::Data(format!("no {} tiles of {} for truth basemaps", args.source, args.city)));
        }
        tiles
    } else {
        Vec::new()
    };
    fs::create_dir_all(&args.out)?;
    let seed = cfg.seed();
    let mut written = Vec::new();
    for i in 0..args.count {
        let reference = (!refs.is_empty()).then(|| &refs[i % refs.len()]);
        let opts = SynthOptions { cfg_scale: args.cfg_scale, color_match: reference.is_some() };
        let out =
            generate_fully_synthetic(&img, bm.as_ref(), mode, &args.city, reference, derive_seed(seed, &format!("sample-{i}")), &opts)?;
        let stem = format!("{}-{i:04}", args.city);
        written.push(write_png(&args.out.join(format!("{stem}.png")), &out.image)?);
        if let Some(b) = out.generated_basemap.as_ref().or(reference.map(|r| &r.basemap)) {
            written.push(write_png(&args.out.join(format!("{stem}.basemap.png")), b)?);
        }
        let json = serde_json::to_vec_pretty(&out.provenance).expect("provenance serializes");
        write_atomic(&args.out.join(format!("{stem}.json")), &json)?;
    }
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct InpaintArgs {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub basemap: Option<PathBuf>,
    pub city: String,
    pub out: PathBuf,
    pub manip_class: Option<ManipulationClass>,
    pub cfg_scale: f64,
    pub source: SourceTag,
}

fn read_rgb(p: &Path) -> Result<RgbImage, CliError> {
    load_rgb_png(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
}

/// Regenerates the masked region of an image. With a manipulation class
/// the basemap is edited first by the basemap model (two-stage), and the
/// edited basemap is written next to the output.
pub fn inpaint_file(cfg: &RunConfig, args: &InpaintArgs) -> Result<Vec<Written>, CliError> {
    let (img_model, _) = load_model(cfg, ModelKind::Image, args.source)?;
    img_model.class_id(&args.city)?;
    let image = read_rgb(&args.image)?;
    let bitmap = load_mask_png(&args.mask).map_err(|e| CliError::Data(format!("{}: {e}", args.mask.display())))?;
    let basemap = args.basemap.as_deref().map(read_rgb).transpose()?;
    if let Some(b) = &basemap {
        let bad = palette_violations(b, &LayerPalette::default());
        if bad > 0 {
            return Err(CliError::Data(format!("basemap has {bad} pixels outside the palette")));
        }
    }
    let seed = cfg.seed();
    if let Some(class) = args.manip_class {
        let (bm_model, _) = load_model(cfg, ModelKind::Basemap, args.source)?;
        let basemap = basemap.ok_or_else(|| CliError::Config("two-stage inpainting needs --basemap".into()))?;
        let truth = TilePair {
            satellite: image,
            basemap,
            coord: GeoCoordinate { lat: 0.0, lon: 0.0 },
            source: args.source,
            city: args.city.clone(),
        };
        let mask = Mask::from_bitmap(bitmap, MaskGenerator::Bezier, seed).map_err(|e| CliError::Data(e.to_string()))?;
        let out = two_stage_manipulate(&bm_model, &img_model, &truth, &mask, class, &args.city, seed, args.cfg_scale)?;
        return Ok(vec![write_png(&args.out, &out.image)?, write_png(&args.out.with_extension("basemap.png"), &out.basemap)?]);
    }
    if img_model.state.conditional() && basemap.is_none() {
        return Err(CliError::Config("the image model is basemap-conditioned; pass --basemap".into()));
    }
    let reference = Image::<f32>::from_rgb8(&image);
    let cond_map = basemap.as_ref().map(Image::<f32>::from_rgb8);
    let cond = Conditioning::new(cond_map.as_ref(), Some(img_model.class_id(&args.city)?));
    let out = inpaint(
        &img_model.state,
        &img_model.schedule,
        &reference,
        &cond,
        &bitmap,
        &SampleOptions::new(seed).cfg(args.cfg_scale as f32),
    )?;
    Ok(vec![write_png(&args.out, &paste_masked(&out.image.to_rgb8(), &image, &bitmap))?])
}
