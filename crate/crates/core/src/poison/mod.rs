//! Batch crafting over a directory of targets.

mod manifest;
mod separability;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use manifest::{
    ManifestRecord, ManifestSummary, PoisonManifest, PoisonMode, RecordStatus, MANIFEST_FILE,
};
pub use separability::{separability_check, SeparabilityReport};

use crate::blend::{optimize, BlendConfig, LossTrace};
use crate::compositor::AttackImage;
use crate::error::{Error, Result};
use crate::imgio::{encode_attack_png, load_grayscale, PixelGrid};
use crate::metrics::evaluate;

pub const DEFAULT_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

/// Optimizes an alpha layer for `target` over `background` and packages the
/// result. `background` is unscaled.
pub fn craft(
    target: &PixelGrid,
    background: &PixelGrid,
    cfg: &BlendConfig,
) -> Result<(AttackImage, LossTrace)> {
    let (alpha, trace) = optimize(target, background, cfg)?;
    let hidden = background.scaled(cfg.background_scale)?;
    Ok((AttackImage::from_gray(&hidden, alpha)?, trace))
}

/// Per-file seed: the first eight bytes of `SHA-256(seed_le || filename)`.
pub fn derive_seed(seed: u64, filename: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(filename.as_bytes());
    let hash = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&hash[..8]);
    u64::from_le_bytes(bytes)
}

/// Uniform background index for a file, independent of processing order.
pub fn assign_background(seed: u64, filename: &str, count: usize) -> usize {
    if count <= 1 {
        return 0;
    }
    ChaCha8Rng::seed_from_u64(derive_seed(seed, filename)).random_range(0..count)
}

#[derive(Debug, Clone)]
pub struct PoisonJob {
    pub target_dir: PathBuf,
    pub backgrounds: Vec<PathBuf>,
    pub mode: PoisonMode,
    pub cfg: BlendConfig,
    pub out_dir: PathBuf,
    /// Lower-case extensions, without the dot, that make a file eligible.
    pub extensions: Vec<String>,
    /// Recorded in the manifest, in seconds since the Unix epoch.
    pub created_at: u64,
}

impl PoisonJob {
    pub fn new(
        target_dir: impl Into<PathBuf>,
        backgrounds: Vec<PathBuf>,
        mode: PoisonMode,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            target_dir: target_dir.into(),
            backgrounds,
            mode,
            cfg: BlendConfig::default(),
            out_dir: out_dir.into(),
            extensions: DEFAULT_EXTENSIONS.iter().map(|s| s.to_string()).collect(),
            created_at: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, self.backgrounds.len()) {
            (PoisonMode::Single, 1) => {}
            (PoisonMode::Single, n) => {
                return Err(Error::Argument(format!(
                    "single mode needs exactly one background, got {n}"
                )))
            }
            (PoisonMode::RandomClass, n) if n < 2 => {
                return Err(Error::Argument(format!(
                    "random mode needs at least two backgrounds, got {n}"
                )))
            }
            _ => {}
        }
        self.cfg.validate()?;
        if !self.target_dir.is_dir() {
            return Err(Error::Argument(format!(
                "target directory {} does not exist",
                self.target_dir.display()
            )));
        }
        if self.out_dir.exists() && same_dir(&self.out_dir, &self.target_dir) {
            return Err(Error::Argument(
                "output directory must differ from the target directory".into(),
            ));
        }
        Ok(())
    }

    fn is_eligible(&self, name: &str) -> bool {
        Path::new(name)
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|ext| {
                let ext = ext.to_ascii_lowercase();
                self.extensions.contains(&ext)
            })
    }

    fn output_name(&self, target_file: &str) -> String {
        let stem = Path::new(target_file)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(target_file);
        format!("{stem}{}.png", self.cfg.filename_tag)
    }
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

/// Lists the regular files of `dir` by name, sorted.
pub(crate) fn list_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        match entry.file_name().into_string() {
            Ok(name) => files.push((name, path)),
            Err(name) => log::warn!("skipping non-UTF-8 file name {name:?}"),
        }
    }
    files.sort();
    Ok(files)
}

struct Task {
    name: String,
    path: PathBuf,
    output: String,
    collides: bool,
}

/// Crafts an attack for every eligible file in `job.target_dir` and writes
/// the images plus [`MANIFEST_FILE`] to `job.out_dir`.
///
/// Per-file failures are recorded and do not stop the job. Files are
/// processed in parallel; records come out in filename order.
pub fn run_job(job: &PoisonJob) -> Result<PoisonManifest> {
    job.validate()?;
    std::fs::create_dir_all(&job.out_dir).map_err(|e| Error::io(&job.out_dir, e))?;

    let backgrounds = job
        .backgrounds
        .iter()
        .map(|p| load_grayscale(p, job.cfg.size))
        .collect::<Result<Vec<_>>>()?;

    let mut skipped = 0;
    let mut seen = HashSet::new();
    let mut tasks = Vec::new();
    for (name, path) in list_files(&job.target_dir)? {
        if !job.is_eligible(&name) {
            skipped += 1;
            continue;
        }
        let output = job.output_name(&name);
        let collides = !seen.insert(output.clone());
        tasks.push(Task {
            name,
            path,
            output,
            collides,
        });
    }

    let mut warnings = Vec::new();
    if tasks.is_empty() {
        let msg = format!("no eligible files in {}", job.target_dir.display());
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let records = tasks
        .par_iter()
        .map(|task| {
            let seed = derive_seed(job.cfg.rng_seed, &task.name);
            let index = match job.mode {
                PoisonMode::Single => 0,
                PoisonMode::RandomClass => {
                    assign_background(job.cfg.rng_seed, &task.name, backgrounds.len())
                }
            };
            let status = if task.collides {
                RecordStatus::Failed {
                    message: format!("output name {} already used by another target", task.output),
                }
            } else {
                match craft_one(job, &task.path, &backgrounds[index], &task.output) {
                    Ok(status) => status,
                    Err(e) => {
                        log::warn!("{}: {e}", task.name);
                        RecordStatus::Failed {
                            message: e.to_string(),
                        }
                    }
                }
            };
            ManifestRecord {
                target_file: task.name.clone(),
                background_file: job.backgrounds[index].display().to_string(),
                rng_seed_used: seed,
                status,
            }
        })
        .collect();

    let manifest = PoisonManifest {
        created_at: job.created_at,
        cfg_digest: job.cfg.digest(),
        cfg: job.cfg.canonical(),
        mode: job.mode,
        skipped,
        records,
        warnings,
    };
    manifest.write(job.out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn craft_one(
    job: &PoisonJob,
    target_path: &Path,
    background: &PixelGrid,
    output: &str,
) -> Result<RecordStatus> {
    let target = load_grayscale(target_path, job.cfg.size)?;
    let (attack, trace) = craft(&target, background, &job.cfg)?;
    encode_attack_png(attack.rgb(), attack.alpha(), job.out_dir.join(output))?;
    let report = evaluate(&attack.quantized(), &target, background, &job.cfg)?;
    Ok(RecordStatus::Crafted {
        output_file: output.to_string(),
        final_loss: trace.final_loss().unwrap_or(f64::NAN),
        report,
    })
}
