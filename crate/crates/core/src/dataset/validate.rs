use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{manifest_path, shared_cities, split_dir, DatasetManifest, ImageType, ManipulationRecord, Split, TypeCounts};
use crate::image::{load_mask_png, load_rgb_png};
use crate::maskgen::sidecar_path;

/// Records re-checked pixel by pixel against their references.
pub const SPOT_CHECK_COUNT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Header,
    Path,
    Invariant,
    Fidelity,
    Disjointness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub record: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub split: Split,
    pub records: usize,
    pub spot_checked: Vec<String>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn of_kind(&self, kind: ViolationKind) -> Vec<&Violation> {
        self.violations.iter().filter(|v| v.kind == kind).collect()
    }
}

pub fn validate_manifest(manifest: &DatasetManifest, data_root: &Path) -> ValidationReport {
    let h = &manifest.header;
    let dir = split_dir(data_root, h.split);
    let mut out = Vec::new();
    let mut push = |kind, record: Option<&str>, detail: String| {
        out.push(Violation { kind, record: record.map(str::to_string), detail })
    };

    let counts = TypeCounts::of(&manifest.records);
    if h.counts != counts || !h.counts.consistent() {
        push(ViolationKind::Header, None, format!("header counts {:?} vs records {:?}", h.counts, counts));
    }
    let mut seen = BTreeSet::new();
    for (a, b) in manifest.records.iter().zip(manifest.records.iter().skip(1)) {
        if a.id >= b.id {
            push(ViolationKind::Header, Some(&b.id), format!("record out of order after {}", a.id));
        }
    }

    let other_path = manifest_path(data_root, h.split.other());
    let other_roster = if other_path.exists() {
        match DatasetManifest::load(&other_path) {
            Ok(m) => Some(m.header.city_roster),
            Err(e) => {
                push(ViolationKind::Disjointness, None, format!("cannot read {}: {e}", other_path.display()));
                None
            }
        }
    } else {
        None
    };
    if let Some(other) = &other_roster {
        for city in shared_cities(&h.city_roster, other) {
            push(ViolationKind::Disjointness, None, format!("city {city} appears in both splits"));
        }
    }

    let mut resolved = Vec::new();
    for r in &manifest.records {
        if !seen.insert(&r.id) {
            push(ViolationKind::Header, Some(&r.id), "duplicate id".into());
        }
        for v in r.invariant_violations() {
            push(ViolationKind::Invariant, Some(&r.id), v);
        }
        if !h.city_roster.contains(&r.city) {
            push(ViolationKind::Invariant, Some(&r.id), format!("city {} missing from the roster", r.city));
        }
        if let Some(other) = &other_roster {
            if other.contains(&r.city) {
                push(
                    ViolationKind::Disjointness,
                    Some(&r.id),
                    format!("city {} belongs to the {} split", r.city, h.split.other()),
                );
            }
        }
        let mut files = vec![dir.join(&r.image)];
        files.extend(r.basemap.iter().map(|b| dir.join(b)));
        if let Some(m) = &r.mask {
            files.push(dir.join(m));
            files.push(sidecar_path(&dir.join(m)));
        }
        files.push(data_root.join(&r.reference).join("sat.png"));
        files.push(data_root.join(&r.reference).join("map.png"));
        let mut all = true;
        for f in files {
            if !f.is_file() {
                all = false;
                push(ViolationKind::Path, Some(&r.id), format!("{} does not resolve", f.display()));
            }
        }
        if all && r.image_type != ImageType::FullySynthetic {
            resolved.push(r);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(h.global_seed);
    let k = SPOT_CHECK_COUNT.min(resolved.len());
    let mut picks: Vec<usize> = sample(&mut rng, resolved.len(), k).into_vec();
    picks.sort_unstable();
    let mut spot_checked = Vec::new();
    for i in picks {
        let r = resolved[i];
        spot_checked.push(r.id.clone());
        if let Err(detail) = spot_check(r, &dir, data_root) {
            push(ViolationKind::Fidelity, Some(&r.id), detail);
        }
    }

    ValidationReport { split: h.split, records: manifest.records.len(), spot_checked, violations: out }
}

/// Known pixels of a pristine or partial record must match its reference.
fn spot_check(r: &ManipulationRecord, dir: &Path, data_root: &Path) -> Result<(), String> {
    let load = |p: &Path| load_rgb_png(p).map_err(|e| format!("{}: {e}", p.display()));
    let image = load(&dir.join(&r.image))?;
    let reference = load(&data_root.join(&r.reference).join("sat.png"))?;
    let ref_map = load(&data_root.join(&r.reference).join("map.png"))?;
    if image.dimensions() != reference.dimensions() {
        return Err(format!("image {:?} vs reference {:?}", image.dimensions(), reference.dimensions()));
    }
    let mask = match &r.mask {
        Some(m) => {
            let p = dir.join(m);
            let mask = load_mask_png(&p).map_err(|e| format!("{}: {e}", p.display()))?;
            if let Some(a) = r.area_fraction {
                if (mask.fraction() - a).abs() > 1e-6 {
                    return Err(format!("mask covers {} but the record says {a}", mask.fraction()));
                }
            }
            Some(mask)
        }
        None => None,
    };
    let known = |i: usize| mask.as_ref().is_none_or(|m| !m.bits[i]);
    let bad = image.pixels().zip(reference.pixels()).enumerate().filter(|&(i, (a, b))| known(i) && a != b).count();
    if bad > 0 {
        return Err(format!("{bad} known pixels differ from the reference image"));
    }
    if let Some(b) = &r.basemap {
        let basemap = load(&dir.join(b))?;
        let bad = basemap.pixels().zip(ref_map.pixels()).enumerate().filter(|&(i, (a, b))| known(i) && a != b).count();
        if bad > 0 {
            return Err(format!("{bad} known basemap pixels differ from the reference basemap"));
        }
    }
    Ok(())
}
