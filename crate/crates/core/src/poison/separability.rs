//! Can a trivial classifier tell poisoned images from clean ones by what a
//! machine sees, while a human sees no difference?

use std::collections::HashMap;
use std::path::Path;

use super::{list_files, DEFAULT_EXTENSIONS};
use crate::blend::mse_loss;
use crate::compositor::flatten_over;
use crate::error::{Error, Result};
use crate::imgio::{load_raster, PixelGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparabilityReport {
    /// Leave-one-out accuracy of a nearest-centroid classifier on machine views.
    pub machine_accuracy: f64,
    /// Mean MSE between human views of paired poisoned and clean files.
    pub human_view_mse_gap: f64,
    pub poisoned: usize,
    pub clean: usize,
    pub pairs: usize,
}

struct Views {
    stem: String,
    machine: PixelGrid,
    human: PixelGrid,
}

fn load_views(dir: &Path) -> Result<Vec<Views>> {
    let mut out = Vec::new();
    for (name, path) in list_files(dir)? {
        let eligible = Path::new(&name)
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| DEFAULT_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !eligible {
            continue;
        }
        let (rgb, alpha) = load_raster(&path)?;
        let machine = rgb.luminance();
        let human = match &alpha {
            Some(a) => flatten_over(a, &machine, 1.0),
            None => machine.clone(),
        };
        let stem = Path::new(&name)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&name)
            .to_string();
        out.push(Views {
            stem,
            machine,
            human,
        });
    }
    Ok(out)
}

fn machine_vectors(set: &[Views]) -> Vec<&[f64]> {
    set.iter().map(|v| v.machine.values()).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Leave-one-out nearest-centroid accuracy over two labelled sample sets.
/// A held-out sample equidistant from both centroids scores one half.
fn loo_nearest_centroid(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    let dim = a[0].len();
    let sum = |set: &[&[f64]]| {
        let mut s = vec![0.0; dim];
        for v in set {
            for (acc, x) in s.iter_mut().zip(*v) {
                *acc += x;
            }
        }
        s
    };
    let (sum_a, sum_b) = (sum(a), sum(b));
    let score = |own: &[&[f64]], own_sum: &[f64], other: &[&[f64]], other_sum: &[f64]| -> f64 {
        let other_centroid: Vec<f64> = other_sum.iter().map(|s| s / other.len() as f64).collect();
        let rest = (own.len() - 1) as f64;
        own.iter()
            .map(|x| {
                let own_centroid: Vec<f64> = own_sum
                    .iter()
                    .zip(*x)
                    .map(|(s, v)| (s - v) / rest)
                    .collect();
                let d_own = sq_dist(x, &own_centroid);
                let d_other = sq_dist(x, &other_centroid);
                if d_own < d_other {
                    1.0
                } else if d_own == d_other {
                    0.5
                } else {
                    0.0
                }
            })
            .sum()
    };
    let correct = score(a, &sum_a, b, &sum_b) + score(b, &sum_b, a, &sum_a);
    correct / (a.len() + b.len()) as f64
}

/// Compares a directory of poisoned images against a directory of clean ones.
///
/// Machine views (alpha dropped) feed a leave-one-out nearest-centroid
/// classifier; no model is trained. Human views (flattened over white) are
/// paired by file stem, after removing `tag` from the end of poisoned stems,
/// and their mean MSE is reported. Each directory needs at least two images
/// and every image must share one size.
pub fn separability_check(
    poisoned_dir: impl AsRef<Path>,
    clean_dir: impl AsRef<Path>,
    tag: &str,
) -> Result<SeparabilityReport> {
    let poisoned = load_views(poisoned_dir.as_ref())?;
    let clean = load_views(clean_dir.as_ref())?;
    if poisoned.len() < 2 || clean.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least two images per set, got {} poisoned and {} clean",
            poisoned.len(),
            clean.len()
        )));
    }
    let dims = poisoned[0].machine.dims();
    for v in poisoned.iter().chain(&clean) {
        if v.machine.dims() != dims {
            return Err(Error::dims("separability images", dims, v.machine.dims()));
        }
    }

    let machine_accuracy =
        loo_nearest_centroid(&machine_vectors(&poisoned), &machine_vectors(&clean));

    let clean_by_stem: HashMap<&str, &Views> = clean.iter().map(|v| (v.stem.as_str(), v)).collect();
    let mut gaps = Vec::new();
    for p in &poisoned {
        let key = p.stem.strip_suffix(tag).unwrap_or(&p.stem);
        if let Some(c) = clean_by_stem.get(key) {
            gaps.push(mse_loss(&p.human, &c.human)?);
        }
    }
    if gaps.is_empty() {
        return Err(Error::Argument(
            "no poisoned file pairs with a clean file of the same stem".into(),
        ));
    }

    Ok(SeparabilityReport {
        machine_accuracy,
        human_view_mse_gap: gaps.iter().sum::<f64>() / gaps.len() as f64,
        poisoned: poisoned.len(),
        clean: clean.len(),
        pairs: gaps.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Luma};

    #[test]
    fn centroid_classifier_on_separated_clusters() {
        let a: Vec<Vec<f64>> = (0..4).map(|i| vec![0.0 + i as f64 * 0.01, 0.0]).collect();
        let b: Vec<Vec<f64>> = (0..4).map(|i| vec![1.0, 1.0 - i as f64 * 0.01]).collect();
        let a: Vec<&[f64]> = a.iter().map(Vec::as_slice).collect();
        let b: Vec<&[f64]> = b.iter().map(Vec::as_slice).collect();
        assert_eq!(loo_nearest_centroid(&a, &b), 1.0);
    }

    #[test]
    fn duplicated_sets_are_not_separable() {
        let a: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![i as f64 / 5.0, (i % 2) as f64])
            .collect();
        let a: Vec<&[f64]> = a.iter().map(Vec::as_slice).collect();
        // The held-out sample's twin always sits in the other class, so
        // leave-one-out lands at or below chance.
        assert!(loo_nearest_centroid(&a, &a) <= 0.5);
    }

    #[test]
    fn identical_points_tie() {
        let a = [[0.3, 0.3].as_slice(), [0.3, 0.3].as_slice()];
        assert_eq!(loo_nearest_centroid(&a, &a), 0.5);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (p, c) = (dir.path().join("p"), dir.path().join("c"));
        std::fs::create_dir(&p).unwrap();
        std::fs::create_dir(&c).unwrap();
        for (d, size) in [(&p, 4), (&c, 5)] {
            for i in 0..2 {
                ImageBuffer::from_pixel(size, size, Luma([i as u8 * 50]))
                    .save(d.join(format!("{i}.png")))
                    .unwrap();
            }
        }
        assert!(matches!(
            separability_check(&p, &c, ""),
            Err(Error::Argument(_))
        ));
    }
}
