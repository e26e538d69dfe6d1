use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::{ClassVocabulary, LabeledEmbeddingSet};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// Gaussian mixture with one randomly rotated anisotropic component per class.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// Expected norm of each class mean.
    pub mean_scale: f64,
    /// Covariance eigenvalues shared by every class, padded with zeros to `dim`.
    pub spectrum: Vec<f64>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// `top` leading eigenvalues followed by `tail` for the remaining coordinates.
    pub fn planted(num_classes: usize, dim: usize, top: &[f64], tail: f64) -> Self {
        let mut spectrum = top.to_vec();
        spectrum.resize(dim.max(top.len()), tail);
        Self {
            num_classes,
            dim,
            mean_scale: 3.0,
            spectrum,
            train_per_class: 500,
            test_per_class: 200,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.dim == 0 || self.train_per_class == 0 {
            return Err(Error::Config(
                "synth needs at least 2 classes, positive dimension and train size".into(),
            ));
        }
        if self.spectrum.len() > self.dim {
            return Err(Error::Config(format!(
                "spectrum has {} entries for dimension {}",
                self.spectrum.len(),
                self.dim
            )));
        }
        if self.spectrum.iter().any(|&v| !(v >= 0.0) || !v.is_finite())
            || !self.spectrum.iter().any(|&v| v > 0.0)
        {
            return Err(Error::Config("spectrum must be non-negative with a positive entry".into()));
        }
        if !(self.mean_scale >= 0.0) {
            return Err(Error::Config("mean_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Haar-distributed orthogonal matrix from the QR factorization of a Gaussian matrix.
pub(crate) fn random_rotation(dim: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Per-class mean and rotation drawn for `spec`. Column `j` of the rotation is
/// the direction carrying `spectrum[j]`.
pub(crate) fn class_models(spec: &SynthSpec) -> Vec<(Vec<f64>, DMatrix<f64>)> {
    (0..spec.num_classes)
        .map(|c| {
            let mut rng = rng::stream(spec.seed, &[rng::tag("synth-class"), c as u64]);
            let scale = spec.mean_scale / (spec.dim as f64).sqrt();
            let mean: Vec<f64> = (0..spec.dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect();
            (mean, random_rotation(spec.dim, &mut rng))
        })
        .collect()
}

fn sample_class(
    spec: &SynthSpec,
    mean: &[f64],
    rotation: &DMatrix<f64>,
    count: usize,
    rng: &mut StreamRng,
    out: &mut LabeledEmbeddingSet,
    class: usize,
) -> Result<()> {
    let d = spec.dim;
    let scales: Vec<f64> = (0..d)
        .map(|j| spec.spectrum.get(j).copied().unwrap_or(0.0).sqrt())
        .collect();
    let mut v = vec![0f32; d];
    for _ in 0..count {
        let z: Vec<f64> = scales
            .iter()
            .map(|s| {
                let n: f64 = StandardNormal.sample(rng);
                s * n
            })
            .collect();
        for (i, slot) in v.iter_mut().enumerate() {
            let mut x = mean[i];
            for (j, zj) in z.iter().enumerate() {
                if *zj != 0.0 {
                    x += rotation[(i, j)] * zj;
                }
            }
            *slot = x as f32;
        }
        out.push(class, &v)?;
    }
    Ok(())
}

/// Samples a train pool and a disjoint test split, class by class.
pub fn synth_dataset(spec: &SynthSpec) -> Result<(LabeledEmbeddingSet, LabeledEmbeddingSet)> {
    spec.validate()?;
    let vocab = ClassVocabulary::new((0..spec.num_classes).map(|c| format!("class_{c}")))?;
    let mut pool = LabeledEmbeddingSet::empty(spec.dim, vocab.clone());
    let mut test = LabeledEmbeddingSet::empty(spec.dim, vocab);
    for (c, (mean, rotation)) in class_models(spec).iter().enumerate() {
        let mut rng = rng::stream(spec.seed, &[rng::tag("synth-train"), c as u64]);
        sample_class(spec, mean, rotation, spec.train_per_class, &mut rng, &mut pool, c)?;
        let mut rng = rng::stream(spec.seed, &[rng::tag("synth-test"), c as u64]);
        sample_class(spec, mean, rotation, spec.test_per_class, &mut rng, &mut test, c)?;
    }
    Ok((pool, test))
}
