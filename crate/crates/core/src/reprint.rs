//! Randomized cross-class extrapolation on principal subspaces.
//!
//! For a source example `x` of class `s` and a target class `t`, the augmented
//! example keeps the part of `x - mean_s` that lies outside the source
//! subspace, swaps the in-subspace part for the projection of a random centered
//! target example onto the target subspace, and re-centers at `mean_t`:
//!
//! ```text
//! x_hat = (I - A_s A_s^t)(x - mean_s) + A_t A_t^t (x_j - mean_t) + mean_t
//! ```
//!
//! The label of `x_hat` is either the target one-hot vector or a mix of source
//! and target one-hot vectors, depending on [`LabelStrategy`].

use rand::Rng;
use rayon::prelude::*;

use crate::embedding::{LabeledEmbeddingSet, SoftLabeledSet};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{norm_sq, ClassGeometry, ClassPca, RankPolicy};
use crate::rng;

/// How the source/target weight of an augmented label is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelStrategy {
    /// Ratio of the determinants of the two projectors. Projector determinants
    /// are 0 unless the projector is the identity, so this is a hard label in
    /// every non-trivial configuration.
    LiteralDeterminant,
    /// Ratio of pseudo-determinants; equal for any two non-zero projectors.
    PseudoDeterminant,
    /// Ratio of projector traces: `(d - h) / ((d - h) + q)`.
    TraceRatio,
    /// Ratio of the energy of the source residual to the total energy of the
    /// two transported parts.
    #[default]
    ResidualEnergy,
    /// Always the target one-hot label.
    Hard,
}

impl LabelStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            LabelStrategy::LiteralDeterminant => "literal_determinant",
            LabelStrategy::PseudoDeterminant => "pseudo_determinant",
            LabelStrategy::TraceRatio => "trace_ratio",
            LabelStrategy::ResidualEnergy => "residual_energy",
            LabelStrategy::Hard => "hard",
        }
    }
}

impl std::str::FromStr for LabelStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "literal_determinant" | "literal" => Ok(Self::LiteralDeterminant),
            "pseudo_determinant" | "pseudo" => Ok(Self::PseudoDeterminant),
            "trace_ratio" | "trace" => Ok(Self::TraceRatio),
            "residual_energy" | "residual" => Ok(Self::ResidualEnergy),
            "hard" => Ok(Self::Hard),
            other => Err(Error::Config(format!("unknown label strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReprintConfig {
    pub source_policy: RankPolicy,
    pub target_policy: RankPolicy,
    pub label_strategy: LabelStrategy,
    pub positivity_epsilon: f64,
    pub seed: u64,
}

impl Default for ReprintConfig {
    fn default() -> Self {
        Self {
            source_policy: RankPolicy::Fixed(5),
            target_policy: RankPolicy::Fixed(5),
            label_strategy: LabelStrategy::ResidualEnergy,
            positivity_epsilon: 0.0,
            seed: 0,
        }
    }
}

impl ReprintConfig {
    pub fn validate(&self) -> Result<()> {
        self.source_policy.validate()?;
        self.target_policy.validate()?;
        if !(self.positivity_epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "positivity epsilon {} must be non-negative",
                self.positivity_epsilon
            )));
        }
        Ok(())
    }
}

/// One synthesized example with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedExample {
    pub vector: Vec<f32>,
    pub soft_label: Vec<f64>,
    pub source_class: usize,
    pub target_class: usize,
    /// Position of the source example within its class, in record order.
    pub source_index: usize,
    /// Position of the sampled candidate within the target class.
    pub candidate_index: usize,
}

/// Draws a target example uniformly and returns its index and centered vector.
pub fn sample_candidate<R: Rng + ?Sized>(
    target: &ClassGeometry,
    target_records: &[&[f32]],
    rng: &mut R,
) -> Result<(usize, Vec<f64>)> {
    if target_records.is_empty() {
        return Err(Error::EmptyClass {
            class: target.class_id(),
        });
    }
    let j = rng.random_range(0..target_records.len());
    Ok((j, target.center(target_records[j])?))
}

/// Builds `residual_s(x - mean_s) + proj_t(candidate) + mean_t` in `f64`.
///
/// Rank-zero subspaces contribute no arithmetic at all, so with both ranks 0
/// the result is bit-for-bit `(x - mean_s) + mean_t`.
fn extrapolate_f64(
    source: &ClassGeometry,
    target: &ClassGeometry,
    centered_source: &[f64],
    candidate: &[f64],
) -> Result<Vec<f64>> {
    let mut out = if source.rank() == 0 {
        centered_source.to_vec()
    } else {
        source.residual(centered_source)?
    };
    if target.rank() > 0 {
        for (o, p) in out.iter_mut().zip(target.project(candidate)?) {
            *o += p;
        }
    }
    for (o, m) in out.iter_mut().zip(target.mean()) {
        *o += m;
    }
    Ok(out)
}

pub fn extrapolate(
    source: &ClassGeometry,
    target: &ClassGeometry,
    x_source: &[f32],
    candidate: &[f64],
) -> Result<Vec<f32>> {
    check_dim(source.dim(), target.dim())?;
    check_dim(target.dim(), candidate.len())?;
    let centered = source.center(x_source)?;
    Ok(extrapolate_f64(source, target, &centered, candidate)?
        .into_iter()
        .map(|v| v as f32)
        .collect())
}

/// Determinant of an orthogonal projector of the given rank in dimension `d`.
///
/// Its eigenvalues are `rank` ones and `d - rank` zeros.
pub fn projector_determinant(rank: usize, d: usize) -> f64 {
    if rank == d {
        1.0
    } else {
        0.0
    }
}

/// Product of the non-zero eigenvalues of an orthogonal projector.
pub fn projector_pseudo_determinant(rank: usize) -> f64 {
    if rank > 0 {
        1.0
    } else {
        0.0
    }
}

/// Soft label for an augmented example from `source` to `target`.
///
/// The mixed label is used only when both `x^t W_s x` and `c^t W_t c` exceed
/// `epsilon`, with `W_s = I - A_s A_s^t` and `W_t = A_t A_t^t`; otherwise the
/// target one-hot label is returned. The literal determinant strategy also
/// requires both projector determinants to be positive.
pub fn refine_label(
    source: &ClassGeometry,
    target: &ClassGeometry,
    centered_source: &[f64],
    candidate: &[f64],
    strategy: LabelStrategy,
    epsilon: f64,
    num_classes: usize,
) -> Result<Vec<f64>> {
    check_dim(source.dim(), centered_source.len())?;
    check_dim(target.dim(), candidate.len())?;
    let mut label = vec![0f64; num_classes];
    let (s, t) = (source.class_id(), target.class_id());
    label[t] = 1.0;
    if strategy == LabelStrategy::Hard {
        return Ok(label);
    }

    // For orthogonal projectors x^t W x = |W x|^2.
    let residual_energy = norm_sq(&source.residual(centered_source)?);
    let projected_energy = norm_sq(&target.project(candidate)?);
    if !(residual_energy > epsilon && projected_energy > epsilon) {
        return Ok(label);
    }

    let d = source.dim();
    let (h, q) = (source.rank(), target.rank());
    let (num, other) = match strategy {
        LabelStrategy::LiteralDeterminant => {
            let det_s = projector_determinant(d - h, d);
            let det_t = projector_determinant(q, d);
            if !(det_s > 0.0 && det_t > 0.0) {
                return Ok(label);
            }
            (det_s, det_t)
        }
        LabelStrategy::PseudoDeterminant => (
            projector_pseudo_determinant(d - h),
            projector_pseudo_determinant(q),
        ),
        LabelStrategy::TraceRatio => ((d - h) as f64, q as f64),
        LabelStrategy::ResidualEnergy => (residual_energy, projected_energy),
        LabelStrategy::Hard => unreachable!(),
    };
    let denom = num + other;
    if !(denom > 0.0) {
        return Ok(label);
    }
    let lambda = (num / denom).clamp(0.0, 1.0);
    label[t] = 1.0 - lambda;
    label[s] += lambda;
    Ok(label)
}

/// Fitted source- and target-policy geometries for every class.
pub struct ClassModels {
    pub source: Vec<ClassGeometry>,
    pub target: Vec<ClassGeometry>,
}

impl ClassModels {
    pub fn fit(set: &LabeledEmbeddingSet, config: &ReprintConfig) -> Result<Self> {
        let pcas = (0..set.num_classes())
            .into_par_iter()
            .map(|c| ClassPca::fit(set, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            source: pcas.iter().map(|p| p.truncate(config.source_policy)).collect(),
            target: pcas.iter().map(|p| p.truncate(config.target_policy)).collect(),
        })
    }
}

fn class_rows(set: &LabeledEmbeddingSet) -> Vec<Vec<&[f32]>> {
    let mut rows = vec![Vec::new(); set.num_classes()];
    for (label, v) in set.iter() {
        rows[label].push(v);
    }
    rows
}

/// Ordered `(source, target)` class pairs with `source != target`.
pub(crate) fn class_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k)
        .flat_map(|s| (0..k).filter(move |&t| t != s).map(move |t| (s, t)))
        .collect()
}

pub(crate) fn require_nonempty(set: &LabeledEmbeddingSet) -> Result<Vec<usize>> {
    let counts = set.class_counts();
    if let Some(class) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass { class });
    }
    Ok(counts)
}

/// Generates one augmented example per (source example, other class).
///
/// Pairs run in ascending `(source, target)` order and source examples in record
/// order. Each example draws its candidate from a stream keyed by
/// `(seed, source, target, index)`.
pub fn augment_examples(
    set: &LabeledEmbeddingSet,
    config: &ReprintConfig,
) -> Result<Vec<AugmentedExample>> {
    config.validate()?;
    require_nonempty(set)?;
    let models = ClassModels::fit(set, config)?;
    let rows = class_rows(set);
    let k = set.num_classes();

    let per_pair = class_pairs(k)
        .into_par_iter()
        .map(|(s, t)| {
            let source = &models.source[s];
            let target = &models.target[t];
            rows[s]
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let mut rng = rng::stream(config.seed, &[s as u64, t as u64, i as u64]);
                    let (j, candidate) = sample_candidate(target, &rows[t], &mut rng)?;
                    let centered = source.center(x)?;
                    let vector = extrapolate_f64(source, target, &centered, &candidate)?
                        .into_iter()
                        .map(|v| v as f32)
                        .collect();
                    let soft_label = refine_label(
                        source,
                        target,
                        &centered,
                        &candidate,
                        config.label_strategy,
                        config.positivity_epsilon,
                        k,
                    )?;
                    Ok(AugmentedExample {
                        vector,
                        soft_label,
                        source_class: s,
                        target_class: t,
                        source_index: i,
                        candidate_index: j,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_pair.into_iter().flatten().collect())
}

/// [`augment_examples`] packed into a soft-labeled set.
pub fn augment_dataset(set: &LabeledEmbeddingSet, config: &ReprintConfig) -> Result<SoftLabeledSet> {
    let examples = augment_examples(set, config)?;
    let mut out = SoftLabeledSet::empty(set.dim(), set.vocab().clone());
    for ex in &examples {
        let label: Vec<f32> = ex.soft_label.iter().map(|&w| w as f32).collect();
        out.push(&label, &ex.vector)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ClassVocabulary;
    use crate::geometry::fit_class_geometry;
    use rand::SeedableRng;

    fn set_from(k: usize, dim: usize, rows: &[(usize, Vec<f32>)]) -> LabeledEmbeddingSet {
        let names: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
        let vocab = ClassVocabulary::new(names).unwrap();
        let labels = rows.iter().map(|r| r.0).collect();
        let data = rows.iter().flat_map(|r| r.1.clone()).collect();
        LabeledEmbeddingSet::from_parts(dim, vocab, labels, data).unwrap()
    }

    /// Source class spread along x around the origin, target along y around (10, 10).
    fn axis_classes() -> LabeledEmbeddingSet {
        set_from(
            2,
            2,
            &[
                (0, vec![-1.0, 0.0]),
                (0, vec![1.0, 0.0]),
                (1, vec![10.0, 8.0]),
                (1, vec![10.0, 12.0]),
            ],
        )
    }

    #[test]
    fn axis_aligned_extrapolation() {
        let set = axis_classes();
        let s = fit_class_geometry(&set, 0, RankPolicy::Fixed(1)).unwrap();
        let t = fit_class_geometry(&set, 1, RankPolicy::Fixed(1)).unwrap();
        assert_eq!(s.mean(), &[0.0, 0.0]);
        assert_eq!(t.mean(), &[10.0, 10.0]);
        let out = extrapolate(&s, &t, &[3.0, 4.0], &[2.0, 7.0]).unwrap();
        assert_eq!(out, vec![10.0, 21.0]);
    }

    #[test]
    fn zero_rank_is_mean_shift() {
        let set = axis_classes();
        let s = fit_class_geometry(&set, 0, RankPolicy::Fixed(0)).unwrap();
        let t = fit_class_geometry(&set, 1, RankPolicy::Fixed(0)).unwrap();
        let out = extrapolate(&s, &t, &[3.0, 4.0], &[2.0, 7.0]).unwrap();
        assert_eq!(out, vec![13.0, 14.0]);
    }

    #[test]
    fn full_rank_returns_candidate_plus_mean() {
        let set = set_from(
            2,
            2,
            &[
                (0, vec![1.0, 0.5]),
                (0, vec![-1.0, 0.25]),
                (0, vec![0.0, -0.75]),
                (1, vec![5.0, 6.0]),
                (1, vec![7.0, 5.0]),
                (1, vec![6.0, 7.0]),
            ],
        );
        let s = fit_class_geometry(&set, 0, RankPolicy::Fixed(2)).unwrap();
        let t = fit_class_geometry(&set, 1, RankPolicy::Fixed(2)).unwrap();
        let cand = t.center(&[7.0, 5.0]).unwrap();
        let out = extrapolate(&s, &t, &[1.0, 0.5], &cand).unwrap();
        assert_eq!(out, vec![7.0, 5.0]);
    }

    #[test]
    fn candidate_sampling_single_and_empty() {
        let set = axis_classes();
        let t = fit_class_geometry(&set, 1, RankPolicy::Fixed(1)).unwrap();
        let one: Vec<&[f32]> = vec![set.vector(2)];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(sample_candidate(&t, &one, &mut rng).unwrap().0, 0);
        }
        assert!(matches!(
            sample_candidate(&t, &[], &mut rng),
            Err(Error::EmptyClass { class: 1 })
        ));
    }

    #[test]
    fn candidate_sampling_is_uniform() {
        let set = set_from(
            2,
            1,
            &[(0, vec![0.0]), (1, vec![1.0]), (1, vec![2.0]), (1, vec![3.0]), (1, vec![4.0])],
        );
        let t = fit_class_geometry(&set, 1, RankPolicy::Fixed(1)).unwrap();
        let rows: Vec<&[f32]> = (1..5).map(|i| set.vector(i)).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_candidate(&t, &rows, &mut rng).unwrap().0] += 1;
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.25).abs() <= 0.02, "{counts:?}");
        }
        let seq = |seed| {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            (0..32)
                .map(|_| sample_candidate(&t, &rows, &mut r).unwrap().0)
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(5), seq(5));
    }

    fn geometry(class_id: usize, d: usize, axes: &[usize]) -> ClassGeometry {
        // Fit on points placed at +/- (i + 1) along each requested axis.
        let mut rows = Vec::new();
        for (i, &a) in axes.iter().enumerate() {
            for sign in [-1.0, 1.0] {
                let mut v = vec![0f32; d];
                v[a] = sign * (axes.len() - i) as f32;
                rows.push((class_id, v));
            }
        }
        if rows.is_empty() {
            rows.push((class_id, vec![0f32; d]));
        }
        let set = set_from(class_id + 2, d, &rows);
        fit_class_geometry(&set, class_id, RankPolicy::Fixed(axes.len())).unwrap()
    }

    #[test]
    fn literal_determinant_is_hard_for_proper_subspaces() {
        let s = geometry(0, 3, &[0]);
        let t = geometry(1, 3, &[1]);
        let label = refine_label(
            &s,
            &t,
            &[1.0, 1.0, 1.0],
            &[1.0, 1.0, 1.0],
            LabelStrategy::LiteralDeterminant,
            0.0,
            2,
        )
        .unwrap();
        assert_eq!(label, vec![0.0, 1.0]);
    }

    #[test]
    fn pseudo_determinant_gives_even_split() {
        let s = geometry(0, 3, &[0]);
        let t = geometry(1, 3, &[1]);
        let label = refine_label(
            &s,
            &t,
            &[1.0, 1.0, 1.0],
            &[1.0, 1.0, 1.0],
            LabelStrategy::PseudoDeterminant,
            0.0,
            2,
        )
        .unwrap();
        assert_eq!(label, vec![0.5, 0.5]);
    }

    #[test]
    fn residual_energy_weights() {
        // Source keeps x; residual of (3, 4) is (0, 4), energy 16.
        // Target keeps y; projection of (2, 7) is (0, 7), energy 49.
        let s = geometry(0, 2, &[0]);
        let t = geometry(1, 2, &[1]);
        let label = refine_label(
            &s,
            &t,
            &[3.0, 4.0],
            &[2.0, 7.0],
            LabelStrategy::ResidualEnergy,
            0.0,
            2,
        )
        .unwrap();
        assert!((label[0] - 16.0 / 65.0).abs() < 1e-15);
        assert!((label[1] - 49.0 / 65.0).abs() < 1e-15);
    }

    #[test]
    fn trace_ratio_weights() {
        let s = geometry(0, 4, &[0]);
        let t = geometry(1, 4, &[1, 2]);
        let label = refine_label(
            &s,
            &t,
            &[1.0, 1.0, 1.0, 1.0],
            &[1.0, 1.0, 1.0, 1.0],
            LabelStrategy::TraceRatio,
            0.0,
            2,
        )
        .unwrap();
        assert!((label[0] - 0.6).abs() < 1e-15 && (label[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn positivity_condition_falls_back_to_hard_label() {
        let s = geometry(0, 2, &[0]);
        let t = geometry(1, 2, &[1]);
        // Source vector inside the source subspace: residual is zero.
        let label =
            refine_label(&s, &t, &[3.0, 0.0], &[2.0, 7.0], LabelStrategy::ResidualEnergy, 0.0, 2)
                .unwrap();
        assert_eq!(label, vec![0.0, 1.0]);
        // Energies 16 and 49, epsilon above the smaller one.
        let label =
            refine_label(&s, &t, &[3.0, 4.0], &[2.0, 7.0], LabelStrategy::ResidualEnergy, 20.0, 2)
                .unwrap();
        assert_eq!(label, vec![0.0, 1.0]);
    }

    #[test]
    fn projector_determinants_match_numeric_lu() {
        let g = geometry(0, 4, &[0, 2]);
        let d = 4;
        let mut p = nalgebra::DMatrix::<f64>::zeros(d, d);
        for a in g.components() {
            let v = nalgebra::DVector::from_column_slice(a);
            p += &v * v.transpose();
        }
        let w = nalgebra::DMatrix::<f64>::identity(d, d) - &p;
        assert!((p.determinant() - projector_determinant(2, d)).abs() < 1e-12);
        assert!((w.determinant() - projector_determinant(2, d)).abs() < 1e-12);
        let id = nalgebra::DMatrix::<f64>::identity(d, d);
        assert_eq!(id.determinant(), projector_determinant(d, d));
    }

    #[test]
    fn output_counts() {
        let two = set_from(
            2,
            2,
            &[
                (0, vec![0.0, 1.0]),
                (0, vec![1.0, 0.0]),
                (0, vec![1.0, 1.0]),
                (1, vec![5.0, 1.0]),
                (1, vec![6.0, 0.0]),
                (1, vec![5.0, 2.0]),
                (1, vec![6.0, 3.0]),
                (1, vec![4.0, 1.0]),
            ],
        );
        let config = ReprintConfig {
            source_policy: RankPolicy::Fixed(1),
            target_policy: RankPolicy::Fixed(1),
            ..Default::default()
        };
        let examples = augment_examples(&two, &config).unwrap();
        assert_eq!(examples.len(), 8);
        assert_eq!(examples.iter().filter(|e| e.target_class == 1).count(), 3);
        assert_eq!(examples.iter().filter(|e| e.target_class == 0).count(), 5);

        let rows: Vec<(usize, Vec<f32>)> = (0..6)
            .map(|i| (i / 2, vec![i as f32, (i * i) as f32 * 0.5]))
            .collect();
        let three = set_from(3, 2, &rows);
        assert_eq!(augment_dataset(&three, &config).unwrap().len(), 12);
    }

    #[test]
    fn empty_class_is_rejected() {
        let set = set_from(3, 1, &[(0, vec![1.0]), (1, vec![2.0])]);
        assert!(matches!(
            augment_dataset(&set, &ReprintConfig::default()),
            Err(Error::EmptyClass { class: 2 })
        ));
    }
}
