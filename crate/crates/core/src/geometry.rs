//! Per-class principal subspaces.
//!
//! A class is summarized by its mean and the leading right-singular vectors of
//! its centered data matrix. Vectors are `f32` on input; everything here is
//! accumulated in `f64`.

use std::io::Write;

use nalgebra::DMatrix;

use crate::embedding::LabeledEmbeddingSet;
use crate::error::{check_dim, Error, Result};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-7;

/// Slack allowed when comparing a cumulative variance ratio to its threshold.
const RATIO_SLACK: f64 = 1e-12;

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankPolicy {
    Fixed(usize),
    /// Smallest rank whose cumulative explained-variance ratio reaches the threshold.
    ExplainedVariance(f64),
}

impl RankPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RankPolicy::Fixed(_) => Ok(()),
            RankPolicy::ExplainedVariance(t) if t > 0.0 && t <= 1.0 => Ok(()),
            RankPolicy::ExplainedVariance(t) => Err(Error::Config(format!(
                "explained-variance threshold {t} outside (0, 1]"
            ))),
        }
    }
}

/// Full decomposition of one class, before rank truncation.
#[derive(Debug, Clone)]
pub struct ClassPca {
    class_id: usize,
    n: usize,
    mean: Vec<f64>,
    /// Numerically non-zero components, each of length d, in decreasing order.
    basis: Vec<Vec<f64>>,
    /// All min(n, d) singular values, non-increasing.
    spectrum: Vec<f64>,
    total_variance: f64,
}

/// Arithmetic mean of a class, accumulated in `f64`.
pub fn class_mean(set: &LabeledEmbeddingSet, class_id: usize) -> Result<Vec<f64>> {
    let mut mean = vec![0f64; set.dim()];
    let mut n = 0usize;
    for (label, v) in set.iter() {
        if label == class_id {
            n += 1;
            for (m, &x) in mean.iter_mut().zip(v) {
                *m += x as f64;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyClass { class: class_id });
    }
    let inv = n as f64;
    mean.iter_mut().for_each(|m| *m /= inv);
    Ok(mean)
}

/// Flips `v` so its largest-magnitude entry is positive (first index wins ties).
pub(crate) fn normalize_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

impl ClassPca {
    /// Decomposes the vectors of `class_id` in `set`.
    pub fn fit(set: &LabeledEmbeddingSet, class_id: usize) -> Result<Self> {
        if class_id >= set.num_classes() {
            return Err(Error::EmptyClass { class: class_id });
        }
        let rows: Vec<&[f32]> = set
            .iter()
            .filter(|(l, _)| *l == class_id)
            .map(|(_, v)| v)
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptyClass { class: class_id });
        }
        let mut pca = Self::fit_rows(&rows, set.dim());
        pca.class_id = class_id;
        Ok(pca)
    }

    /// Decomposes an arbitrary non-empty list of rows of dimension `dim`.
    pub fn fit_rows(rows: &[&[f32]], dim: usize) -> Self {
        let n = rows.len();
        let mut mean = vec![0f64; dim];
        for row in rows {
            for (m, &x) in mean.iter_mut().zip(row.iter()) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let centered = DMatrix::from_fn(n, dim, |i, j| rows[i][j] as f64 - mean[j]);
        let sum_sq: f64 = centered.iter().map(|v| v * v).sum();
        let total_variance = if n > 1 { sum_sq / (n - 1) as f64 } else { 0.0 };

        let (spectrum, basis) = if n == 0 || dim == 0 || sum_sq == 0.0 {
            (vec![0.0; n.min(dim)], Vec::new())
        } else {
            let svd = centered.svd(false, true);
            let v_t = svd.v_t.expect("right singular vectors requested");
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&a, &b| {
                svd.singular_values[b]
                    .total_cmp(&svd.singular_values[a])
                    .then(a.cmp(&b))
            });
            let spectrum: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
            let cutoff = RANK_TOLERANCE * spectrum[0];
            let basis = order
                .iter()
                .zip(&spectrum)
                .take_while(|(_, &s)| s > 0.0 && s >= cutoff)
                .map(|(&i, _)| {
                    let mut v: Vec<f64> = v_t.row(i).iter().copied().collect();
                    normalize_sign(&mut v);
                    v
                })
                .collect();
            (spectrum, basis)
        };

        Self {
            class_id: 0,
            n,
            mean,
            basis,
            spectrum,
            total_variance,
        }
    }

    pub fn numerical_rank(&self) -> usize {
        self.basis.len()
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Explained-variance ratio of every singular value.
    pub fn all_ratios(&self) -> Vec<f64> {
        let total: f64 = self.spectrum.iter().map(|s| s * s).sum();
        if total == 0.0 {
            return vec![0.0; self.spectrum.len()];
        }
        self.spectrum.iter().map(|s| s * s / total).collect()
    }

    /// Rank selected by `policy`, clamped to the numerical rank.
    pub fn select_rank(&self, policy: RankPolicy) -> usize {
        let r = self.numerical_rank();
        match policy {
            RankPolicy::Fixed(h) => h.min(r),
            RankPolicy::ExplainedVariance(threshold) => {
                let mut cumulative = 0.0;
                for (i, ratio) in self.all_ratios().into_iter().take(r).enumerate() {
                    cumulative += ratio;
                    if cumulative + RATIO_SLACK >= threshold {
                        return i + 1;
                    }
                }
                r
            }
        }
    }

    pub fn truncate(&self, policy: RankPolicy) -> ClassGeometry {
        let h = self.select_rank(policy);
        ClassGeometry {
            class_id: self.class_id,
            n: self.n,
            mean: self.mean.clone(),
            components: self.basis[..h].to_vec(),
            singular_values: self.spectrum[..h].to_vec(),
            spectrum_energy: self.spectrum.iter().map(|s| s * s).sum(),
            total_variance: self.total_variance,
        }
    }
}

/// Mean and leading principal subspace of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGeometry {
    class_id: usize,
    n: usize,
    mean: Vec<f64>,
    /// `h` orthonormal columns of length d.
    components: Vec<Vec<f64>>,
    singular_values: Vec<f64>,
    spectrum_energy: f64,
    total_variance: f64,
}

/// Fits the mean and `policy`-truncated principal subspace of one class.
pub fn fit_class_geometry(
    set: &LabeledEmbeddingSet,
    class_id: usize,
    policy: RankPolicy,
) -> Result<ClassGeometry> {
    policy.validate()?;
    Ok(ClassPca::fit(set, class_id)?.truncate(policy))
}

impl ClassGeometry {
    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.components.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn center(&self, x: &[f32]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(x.iter()
            .zip(&self.mean)
            .map(|(&v, &m)| v as f64 - m)
            .collect())
    }

    /// Coordinates of `x` in the component basis.
    pub fn coordinates(&self, centered: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), centered.len())?;
        Ok(self.components.iter().map(|a| dot(a, centered)).collect())
    }

    /// `A (A^t x)`; the zero vector when the rank is 0.
    pub fn project(&self, centered: &[f64]) -> Result<Vec<f64>> {
        let coords = self.coordinates(centered)?;
        let mut out = vec![0f64; self.dim()];
        for (a, c) in self.components.iter().zip(coords) {
            for (o, &ai) in out.iter_mut().zip(a) {
                *o += c * ai;
            }
        }
        Ok(out)
    }

    /// `x - A (A^t x)`.
    pub fn residual(&self, centered: &[f64]) -> Result<Vec<f64>> {
        let p = self.project(centered)?;
        Ok(centered.iter().zip(p).map(|(x, p)| x - p).collect())
    }

    /// Share of total variance carried by each kept component.
    pub fn explained_variance_ratios(&self) -> Result<Vec<f64>> {
        if self.total_variance <= 0.0 || self.spectrum_energy <= 0.0 {
            return Err(Error::DegenerateVariance(format!(
                "class {} has zero total variance",
                self.class_id
            )));
        }
        Ok(self
            .singular_values
            .iter()
            .map(|s| s * s / self.spectrum_energy)
            .collect())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Writes per-class means, ratios and cumulative ratios as CSV.
///
/// One row per kept component: `class,name,n,rank,component,ratio,cumulative`.
/// Classes whose variance is zero contribute a single row with empty ratio
/// fields.
pub fn write_geometry_csv(
    set: &LabeledEmbeddingSet,
    policy: RankPolicy,
    out: &mut impl Write,
) -> Result<()> {
    writeln!(out, "class,name,n,rank,component,ratio,cumulative")?;
    for c in 0..set.num_classes() {
        let g = match fit_class_geometry(set, c, policy) {
            Ok(g) => g,
            Err(Error::EmptyClass { .. }) => continue,
            Err(e) => return Err(e),
        };
        let name = set.vocab().name(c);
        match g.explained_variance_ratios() {
            Ok(ratios) if !ratios.is_empty() => {
                let mut cumulative = 0.0;
                for (i, r) in ratios.iter().enumerate() {
                    cumulative += r;
                    writeln!(
                        out,
                        "{c},{name},{},{},{},{r},{cumulative}",
                        g.n_samples(),
                        g.rank(),
                        i + 1
                    )?;
                }
            }
            _ => writeln!(out, "{c},{name},{},{},,,", g.n_samples(), g.rank())?,
        }
    }
    Ok(())
}

/// Writes `class,name,v0,...,v{d-1}` rows of class means.
pub fn write_means_csv(set: &LabeledEmbeddingSet, out: &mut impl Write) -> Result<()> {
    let header: Vec<String> = (0..set.dim()).map(|j| format!("v{j}")).collect();
    writeln!(out, "class,name,{}", header.join(","))?;
    for c in 0..set.num_classes() {
        let mean = match class_mean(set, c) {
            Ok(m) => m,
            Err(Error::EmptyClass { .. }) => continue,
            Err(e) => return Err(e),
        };
        let cells: Vec<String> = mean.iter().map(|m| m.to_string()).collect();
        writeln!(out, "{c},{},{}", set.vocab().name(c), cells.join(","))?;
    }
    Ok(())
}
