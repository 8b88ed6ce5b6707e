//! Seeded synthetic datasets: clustered images of local features.
//!
//! Each image is assigned one of `clusters` Gaussian centers; its local
//! features are that center plus isotropic noise. Queries are drawn the same
//! way, so retrieval quality against cluster labels is a meaningful sanity
//! signal at desk scale.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use agh_core::io::{self, Manifest};

/// Parameters of the generator. All counts are per the generated dataset;
/// the noise scale is the per-coordinate standard deviation around a cluster
/// center (centers themselves are standard normal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub image_count: usize,
    pub feature_dim: usize,
    pub clusters: usize,
    pub locals_min: usize,
    pub locals_max: usize,
    pub noise: f64,
    pub query_count: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("image_count", self.image_count),
            ("feature_dim", self.feature_dim),
            ("clusters", self.clusters),
            ("locals_min", self.locals_min),
            ("query_count", self.query_count),
        ] {
            if v == 0 {
                bail!("{name} must be positive");
            }
        }
        if self.locals_min > self.locals_max {
            bail!(
                "locals_min {} exceeds locals_max {}",
                self.locals_min,
                self.locals_max
            );
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            bail!("noise must be a positive finite number, got {}", self.noise);
        }
        Ok(())
    }
}

/// In-memory dataset: per-image local features plus the hidden cluster labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub images: Vec<DMatrix<f64>>,
    pub image_labels: Vec<usize>,
    pub queries: Vec<DMatrix<f64>>,
    pub query_labels: Vec<usize>,
}

/// Files emitted by [`write_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFiles {
    pub features: PathBuf,
    pub manifest: PathBuf,
    pub query_features: PathBuf,
    pub query_manifest: PathBuf,
    pub labels: PathBuf,
}

// One image: its center plus noise, drawn column by column so the stream
// layout (and therefore every byte of output) is pinned by the seed alone.
fn draw_image(
    rng: &mut ChaCha8Rng,
    centers: &[DVector<f64>],
    spec: &SyntheticSpec,
) -> (DMatrix<f64>, usize) {
    let label = rng.gen_range(0..spec.clusters);
    let n = rng.gen_range(spec.locals_min..=spec.locals_max);
    let mut data = Vec::with_capacity(spec.feature_dim * n);
    for _ in 0..n {
        for &center in centers[label].iter() {
            let eps: f64 = rng.sample(StandardNormal);
            data.push(center + spec.noise * eps);
        }
    }
    (
        DMatrix::from_column_slice(spec.feature_dim, n, &data),
        label,
    )
}

/// Draw the dataset. Reproducible: the same spec yields the same dataset.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<DVector<f64>> = (0..spec.clusters)
        .map(|_| DVector::from_fn(spec.feature_dim, |_, _| rng.sample(StandardNormal)))
        .collect();

    let mut images = Vec::with_capacity(spec.image_count);
    let mut image_labels = Vec::with_capacity(spec.image_count);
    for _ in 0..spec.image_count {
        let (v, label) = draw_image(&mut rng, &centers, spec);
        images.push(v);
        image_labels.push(label);
    }
    let mut queries = Vec::with_capacity(spec.query_count);
    let mut query_labels = Vec::with_capacity(spec.query_count);
    for _ in 0..spec.query_count {
        let (v, label) = draw_image(&mut rng, &centers, spec);
        queries.push(v);
        query_labels.push(label);
    }
    Ok(SyntheticDataset {
        images,
        image_labels,
        queries,
        query_labels,
    })
}

fn concat_columns(images: &[DMatrix<f64>], dim: usize) -> DMatrix<f64> {
    let total = images.iter().map(DMatrix::ncols).sum();
    let mut out = DMatrix::zeros(dim, total);
    let mut at = 0;
    for image in images {
        out.columns_mut(at, image.ncols()).copy_from(image);
        at += image.ncols();
    }
    out
}

fn write_split(
    images: &[DMatrix<f64>],
    dim: usize,
    features: &Path,
    manifest: &Path,
) -> Result<()> {
    let counts: Vec<usize> = images.iter().map(DMatrix::ncols).collect();
    io::write_fvecs(&concat_columns(images, dim), features)
        .with_context(|| format!("writing {}", features.display()))?;
    io::write_manifest(&Manifest::from_counts(dim, &counts)?, manifest)
        .with_context(|| format!("writing {}", manifest.display()))?;
    Ok(())
}

/// Write the dataset as fvecs + manifest pairs plus a `labels.csv`
/// (`kind,index,label`) recording the hidden cluster assignments.
pub fn write_dataset(
    dataset: &SyntheticDataset,
    dim: usize,
    out_dir: &Path,
) -> Result<GeneratedFiles> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let files = GeneratedFiles {
        features: out_dir.join("db.fvecs"),
        manifest: out_dir.join("db.manifest"),
        query_features: out_dir.join("queries.fvecs"),
        query_manifest: out_dir.join("queries.manifest"),
        labels: out_dir.join("labels.csv"),
    };
    write_split(&dataset.images, dim, &files.features, &files.manifest)?;
    write_split(
        &dataset.queries,
        dim,
        &files.query_features,
        &files.query_manifest,
    )?;
    let mut labels = String::from("kind,index,label\n");
    for (i, label) in dataset.image_labels.iter().enumerate() {
        labels.push_str(&format!("db,{i},{label}\n"));
    }
    for (i, label) in dataset.query_labels.iter().enumerate() {
        labels.push_str(&format!("query,{i},{label}\n"));
    }
    std::fs::write(&files.labels, labels)
        .with_context(|| format!("writing {}", files.labels.display()))?;
    Ok(files)
}
