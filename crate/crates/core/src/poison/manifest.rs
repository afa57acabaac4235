//! `poison_manifest.txt`: one tab-separated `key=value` record per line.
//!
//! The first non-comment line is the `kind=job` record. Each eligible target
//! file gets a `kind=file` record, in filename order. `kind=warning` records
//! carry job-level warnings. Values escape `\`, tab, CR and LF with a
//! backslash.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{format_real, AttackReport};

pub const MANIFEST_FILE: &str = "poison_manifest.txt";
const HEADER: &str = "# alphaveil poison manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoisonMode {
    /// One fixed hidden background for every target.
    Single,
    /// A background drawn per target from a class of at least two.
    RandomClass,
}

impl PoisonMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PoisonMode::Single => "single",
            PoisonMode::RandomClass => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single" => Some(PoisonMode::Single),
            "random" | "random_class" => Some(PoisonMode::RandomClass),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordStatus {
    Crafted {
        output_file: String,
        final_loss: f64,
        report: AttackReport,
    },
    Failed {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    /// File name inside the target directory.
    pub target_file: String,
    pub background_file: String,
    pub rng_seed_used: u64,
    pub status: RecordStatus,
}

impl ManifestRecord {
    pub fn is_ok(&self) -> bool {
        matches!(self.status, RecordStatus::Crafted { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoisonManifest {
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub cfg_digest: String,
    pub cfg: String,
    pub mode: PoisonMode,
    pub skipped: usize,
    pub records: Vec<ManifestRecord>,
    pub warnings: Vec<String>,
}

/// Counts printed after a batch run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifestSummary {
    pub processed: usize,
    pub failed: usize,
    pub skipped: usize,
    /// `None` when nothing was crafted.
    pub mean_final_loss: Option<f64>,
}

impl PoisonManifest {
    pub fn summary(&self) -> ManifestSummary {
        let losses: Vec<f64> = self
            .records
            .iter()
            .filter_map(|r| match r.status {
                RecordStatus::Crafted { final_loss, .. } => Some(final_loss),
                RecordStatus::Failed { .. } => None,
            })
            .collect();
        ManifestSummary {
            processed: losses.len(),
            failed: self.records.len() - losses.len(),
            skipped: self.skipped,
            mean_final_loss: (!losses.is_empty())
                .then(|| losses.iter().sum::<f64>() / losses.len() as f64),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        write_record(
            &mut out,
            &[
                ("kind", "job".into()),
                ("created_at", self.created_at.to_string()),
                ("cfg_digest", self.cfg_digest.clone()),
                ("cfg", self.cfg.clone()),
                ("mode", self.mode.as_str().into()),
                ("eligible", self.records.len().to_string()),
                ("skipped", self.skipped.to_string()),
            ],
        );
        for w in &self.warnings {
            write_record(
                &mut out,
                &[("kind", "warning".into()), ("message", w.clone())],
            );
        }
        for r in &self.records {
            let mut fields = vec![
                ("kind", "file".to_string()),
                ("target", r.target_file.clone()),
                ("background", r.background_file.clone()),
                ("rng_seed", r.rng_seed_used.to_string()),
            ];
            match &r.status {
                RecordStatus::Crafted {
                    output_file,
                    final_loss,
                    report,
                } => {
                    fields.push(("status", "ok".into()));
                    fields.push(("output", output_file.clone()));
                    fields.push(("final_loss", format_real(*final_loss)));
                    fields.extend(report.fields());
                }
                RecordStatus::Failed { message } => {
                    fields.push(("status", "failed".into()));
                    fields.push(("error", message.clone()));
                }
            }
            write_record(&mut out, &fields);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut job = None;
        let mut records = Vec::new();
        let mut warnings = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields = Fields::parse(line, lineno + 1)?;
            match fields.get("kind")? {
                "job" => {
                    job = Some((
                        fields.number::<u64>("created_at")?,
                        fields.get("cfg_digest")?.to_string(),
                        fields.get("cfg")?.to_string(),
                        PoisonMode::parse(fields.get("mode")?).ok_or_else(|| fields.bad("mode"))?,
                        fields.number::<usize>("skipped")?,
                    ))
                }
                "warning" => warnings.push(fields.get("message")?.to_string()),
                "file" => records.push(fields.record()?),
                other => {
                    return Err(Error::Argument(format!(
                        "manifest line {}: unknown record kind {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        let (created_at, cfg_digest, cfg, mode, skipped) =
            job.ok_or_else(|| Error::Argument("manifest has no job record".into()))?;
        Ok(Self {
            created_at,
            cfg_digest,
            cfg,
            mode,
            skipped,
            records,
            warnings,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn write_record(out: &mut String, fields: &[(&str, String)]) {
    let line: Vec<String> = fields
        .iter()
        .map(|(k, v)| format!("{k}={}", escape(v)))
        .collect();
    let _ = writeln!(out, "{}", line.join("\t"));
}

fn escape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    for c in v.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

struct Fields {
    line: usize,
    pairs: Vec<(String, String)>,
}

impl Fields {
    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let pairs = line
            .split('\t')
            .map(|field| {
                field
                    .split_once('=')
                    .map(|(k, v)| (k.to_string(), unescape(v)))
                    .ok_or_else(|| {
                        Error::Argument(format!(
                            "manifest line {lineno}: field {field:?} has no '='"
                        ))
                    })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            line: lineno,
            pairs,
        })
    }

    fn bad(&self, key: &str) -> Error {
        Error::Argument(format!("manifest line {}: bad or missing {key}", self.line))
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| self.bad(key))
    }

    fn number<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.parse().map_err(|_| self.bad(key))
    }

    fn real(&self, key: &str) -> Result<f64> {
        match self.get(key)? {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            _ => self.number(key),
        }
    }

    fn record(&self) -> Result<ManifestRecord> {
        let status = match self.get("status")? {
            "ok" => RecordStatus::Crafted {
                output_file: self.get("output")?.to_string(),
                final_loss: self.real("final_loss")?,
                report: AttackReport {
                    human_fidelity_mse: self.real("human_fidelity_mse")?,
                    human_fidelity_psnr: self.real("human_fidelity_psnr")?,
                    machine_divergence_mse: self.real("machine_divergence_mse")?,
                    hidden_integrity_mse: self.real("hidden_integrity_mse")?,
                    dark_exposure_mse: self.real("dark_exposure_mse")?,
                    feasibility_fraction: self.real("feasibility_fraction")?,
                    success: self.number("success")?,
                },
            },
            "failed" => RecordStatus::Failed {
                message: self.get("error")?.to_string(),
            },
            _ => return Err(self.bad("status")),
        };
        Ok(ManifestRecord {
            target_file: self.get("target")?.to_string(),
            background_file: self.get("background")?.to_string(),
            rng_seed_used: self.number("rng_seed")?,
            status,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> PoisonManifest {
        PoisonManifest {
            created_at: 1_700_000_000,
            cfg_digest: "00ff00ff00ff00ff".into(),
            cfg: "size=4x4;steps=10".into(),
            mode: PoisonMode::RandomClass,
            skipped: 2,
            records: vec![
                ManifestRecord {
                    target_file: "a b\tc.jpg".into(),
                    background_file: "/tmp/bg 1.png".into(),
                    rng_seed_used: u64::MAX,
                    status: RecordStatus::Crafted {
                        output_file: "a b\tc_blended.png".into(),
                        final_loss: 1.25e-7,
                        report: AttackReport {
                            human_fidelity_mse: 0.0,
                            human_fidelity_psnr: f64::INFINITY,
                            machine_divergence_mse: 0.1,
                            hidden_integrity_mse: 0.0,
                            dark_exposure_mse: 0.3,
                            feasibility_fraction: 1.0,
                            success: true,
                        },
                    },
                },
                ManifestRecord {
                    target_file: "broken.png".into(),
                    background_file: "bg.png".into(),
                    rng_seed_used: 3,
                    status: RecordStatus::Failed {
                        message: "format error\nline two".into(),
                    },
                },
            ],
            warnings: vec!["something odd".into()],
        }
    }

    #[test]
    fn text_round_trip() {
        let m = sample();
        let text = m.to_text();
        assert!(text.starts_with(HEADER));
        assert_eq!(text.lines().count(), 5);
        assert_eq!(PoisonManifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn summary_counts() {
        let s = sample().summary();
        assert_eq!((s.processed, s.failed, s.skipped), (1, 1, 2));
        assert_eq!(s.mean_final_loss, Some(1.25e-7));
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(PoisonManifest::parse("").is_err());
        assert!(PoisonManifest::parse("kind=job\tcreated_at=x").is_err());
        assert!(PoisonManifest::parse("nonsense").is_err());
    }

    proptest! {
        #[test]
        fn escaping_round_trips(s in "\\PC*|[\\\\\t\n\r=a]*") {
            prop_assert_eq!(unescape(&escape(&s)), s.clone());
            prop_assert!(!escape(&s).contains(['\t', '\n']));
        }
    }
}
