use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use satsynth::bench::{
    evaluate, reference_detectors, reference_localizers, AdapterRole, BenchItem, DetectorAdapter, EvalConfig,
    EvalReport, Heatmap, LocalizerAdapter, OracleDetector, OracleLocalizer, RandomDetector, RandomLocalizer,
    ResidualEnergyDetector, ResidualLocalizer,
};
use satsynth::dataset::split_dir;
use satsynth::image::write_atomic;

use crate::config::{AdapterSpec, RunConfig};
use crate::data::require_data_root;
use crate::dataset::load_valid;
use crate::error::CliError;

/// Runs `command` once, feeding it one absolute image path per line, and
/// returns one stdout line per input. Any failure is reported for every
/// item so the harness records it against the adapter.
fn run_lines(command: &[String], items: &[BenchItem]) -> Result<Vec<String>, String> {
    let mut input = String::new();
    for it in items {
        let p = std::path::absolute(&it.image_path).map_err(|e| e.to_string())?;
        input.push_str(&p.to_string_lossy());
        input.push('\n');
    }
    let mut child = Command::new(&command[0])
        .args(&command[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| format!("cannot start {}: {e}", command[0]))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = std::thread::spawn(move || {
        // a child that exits early closes the pipe; its exit status says why
        let _ = stdin.write_all(input.as_bytes());
    });
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    writer.join().expect("stdin writer");
    if !out.status.success() {
        return Err(format!("{} exited with {}", command[0], out.status));
    }
    let text = String::from_utf8(out.stdout).map_err(|_| "stdout is not UTF-8".to_string())?;
    let lines: Vec<String> = text.lines().map(|l| l.trim().to_string()).collect();
    if lines.len() != items.len() {
        return Err(format!("expected {} output lines, got {}", items.len(), lines.len()));
    }
    Ok(lines)
}

fn spread<T>(items: &[BenchItem], r: Result<Vec<Result<T, String>>, String>) -> Vec<Result<T, String>> {
    match r {
        Ok(v) => v,
        Err(e) => items.iter().map(|_| Err(e.clone())).collect(),
    }
}

/// External detector: each output line is a finite score.
pub struct CommandDetector {
    pub name: String,
    pub command: Vec<String>,
    pub role: AdapterRole,
    pub threshold: f64,
}

impl DetectorAdapter for CommandDetector {
    fn name(&self) -> &str {
        &self.name
    }

    fn role(&self) -> AdapterRole {
        self.role
    }

    fn original_threshold(&self) -> f64 {
        self.threshold
    }

    fn score(&self, item: &BenchItem) -> Result<f64, String> {
        self.score_all(std::slice::from_ref(item)).pop().expect("one result")
    }

    fn score_all(&self, items: &[BenchItem]) -> Vec<Result<f64, String>> {
        let parsed = run_lines(&self.command, items).map(|lines| {
            lines
                .iter()
                .enumerate()
                .map(|(i, l)| match l.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(format!("line {}: '{l}' is not a finite score", i + 1)),
                })
                .collect()
        });
        spread(items, parsed)
    }
}

/// Reads an 8- or 16-bit grayscale PNG as values in [0, 1].
pub fn read_heatmap(path: &Path) -> Result<Heatmap, String> {
    let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = match img {
        image::DynamicImage::ImageLuma8(g) => g.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect(),
        image::DynamicImage::ImageLuma16(g) => g.pixels().map(|p| f64::from(p.0[0]) / 65535.0).collect(),
        other => return Err(format!("{}: expected a grayscale PNG, got {:?}", path.display(), other.color())),
    };
    Ok(Heatmap { width: w, height: h, values })
}

/// External localizer: each output line is the path of a heatmap PNG.
pub struct CommandLocalizer {
    pub name: String,
    pub command: Vec<String>,
    pub threshold: f64,
}

impl LocalizerAdapter for CommandLocalizer {
    fn name(&self) -> &str {
        &self.name
    }

    fn fixed_threshold(&self) -> f64 {
        self.threshold
    }

    fn heatmap(&self, item: &BenchItem) -> Result<Heatmap, String> {
        self.heatmap_all(std::slice::from_ref(item)).pop().expect("one result")
    }

    fn heatmap_all(&self, items: &[BenchItem]) -> Vec<Result<Heatmap, String>> {
        let parsed = run_lines(&self.command, items)
            .map(|lines| lines.iter().map(|l| read_heatmap(&PathBuf::from(l))).collect());
        spread(items, parsed)
    }
}

fn detector(spec: &AdapterSpec, seed: u64) -> Result<Box<dyn DetectorAdapter>, CliError> {
    let role = spec.role.unwrap_or(AdapterRole::Both);
    if let Some(command) = &spec.command {
        return Ok(Box::new(CommandDetector {
            name: spec.name.clone(),
            command: command.clone(),
            role,
            threshold: spec.threshold,
        }));
    }
    Ok(match spec.builtin.as_deref().unwrap_or_default() {
        "oracle" => Box::new(OracleDetector::new(role)),
        "anti-oracle" => Box::new(OracleDetector::anti(role)),
        "random" => Box::new(RandomDetector::new(role, seed)),
        "residual" => Box::new(ResidualEnergyDetector { threshold: spec.threshold }),
        other => return Err(CliError::Config(format!("unknown builtin detector '{other}'"))),
    })
}

fn localizer(spec: &AdapterSpec, seed: u64) -> Result<Box<dyn LocalizerAdapter>, CliError> {
    if let Some(command) = &spec.command {
        return Ok(Box::new(CommandLocalizer {
            name: spec.name.clone(),
            command: command.clone(),
            threshold: spec.threshold,
        }));
    }
    Ok(match spec.builtin.as_deref().unwrap_or_default() {
        "oracle" => Box::new(OracleLocalizer { inverted: false }),
        "anti-oracle" => Box::new(OracleLocalizer { inverted: true }),
        "random" => Box::new(RandomLocalizer { seed }),
        "residual" => Box::new(ResidualLocalizer { threshold: spec.threshold, ..Default::default() }),
        other => return Err(CliError::Config(format!("unknown builtin localizer '{other}'"))),
    })
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub path: PathBuf,
}

/// Scores the configured split and writes the JSON report. With no adapters
/// configured the reference set runs. Adapter failures are in
/// `report.errors`; the caller decides the exit code.
pub fn run(cfg: &RunConfig) -> Result<EvalOutcome, CliError> {
    let e = &cfg.evaluate;
    let root = require_data_root(cfg)?;
    let manifest = load_valid(cfg, e.split)?;
    let seed = cfg.seed();
    let (detectors, localizers) = if e.detectors.is_empty() && e.localizers.is_empty() {
        log::info!("no adapters configured; running the reference set");
        (reference_detectors(), reference_localizers())
    } else {
        (
            e.detectors.iter().map(|s| detector(s, seed)).collect::<Result<Vec<_>, _>>()?,
            e.localizers.iter().map(|s| localizer(s, seed)).collect::<Result<Vec<_>, _>>()?,
        )
    };
    let ec = EvalConfig { aggregation: e.aggregation, calibrate_three_way: e.calibrate_three_way };
    let report = evaluate(&manifest, root, &detectors, &localizers, &ec);
    let path = e.report.clone().unwrap_or_else(|| split_dir(root, e.split).join("report.json"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(&path, report.to_json().as_bytes())?;
    Ok(EvalOutcome { report, path })
}
