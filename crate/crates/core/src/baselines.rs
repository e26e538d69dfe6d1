//! Baseline augmenters operating on hidden-space vectors.
//!
//! Balancing methods (everything except [`ge3`]) add examples to each class
//! below the majority count until every class matches it exactly. The base
//! example for the j-th new example of a class is taken round-robin over a
//! seeded permutation of that class, so every original is used as evenly as
//! possible.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::embedding::{LabeledEmbeddingSet, SoftLabeledSet};
use crate::error::{Error, Result};
use crate::geometry::class_mean;
use crate::reprint::{class_pairs, require_nonempty};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Upsample,
    Noise,
    Smote,
    MixupH,
    WithinExtrapolate,
    LinearDelta,
    Ge3,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 7] = [
        BaselineMethod::Upsample,
        BaselineMethod::Noise,
        BaselineMethod::Smote,
        BaselineMethod::MixupH,
        BaselineMethod::WithinExtrapolate,
        BaselineMethod::LinearDelta,
        BaselineMethod::Ge3,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::Upsample => "upsample",
            BaselineMethod::Noise => "noise",
            BaselineMethod::Smote => "smote",
            BaselineMethod::MixupH => "mixup",
            BaselineMethod::WithinExtrapolate => "we",
            BaselineMethod::LinearDelta => "ld",
            BaselineMethod::Ge3 => "ge3",
        }
    }
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upsample" | "upspl" => Ok(Self::Upsample),
            "noise" => Ok(Self::Noise),
            "smote" => Ok(Self::Smote),
            "mixup" | "mixup_h" | "tmix" => Ok(Self::MixupH),
            "we" => Ok(Self::WithinExtrapolate),
            "ld" => Ok(Self::LinearDelta),
            "ge3" => Ok(Self::Ge3),
            other => Err(Error::Config(format!("unknown baseline `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Standard deviation of the per-coordinate noise.
    pub noise_sigma: f64,
    pub smote_k: usize,
    pub mixup_alpha: f64,
    pub we_lambda: f64,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn new(method: BaselineMethod) -> Self {
        Self {
            method,
            noise_sigma: 0.1,
            smote_k: 5,
            mixup_alpha: 0.75,
            we_lambda: 0.5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma > 0.0) {
            return Err(Error::Config("noise_sigma must be positive".into()));
        }
        if self.smote_k == 0 {
            return Err(Error::Config("smote_k must be at least 1".into()));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::Config("mixup_alpha must be positive".into()));
        }
        if !self.we_lambda.is_finite() {
            return Err(Error::Config("we_lambda must be finite".into()));
        }
        Ok(())
    }
}

/// Augmented examples plus any fallbacks taken while producing them.
#[derive(Debug, Clone)]
pub struct Augmentation {
    pub set: SoftLabeledSet,
    pub warnings: Vec<String>,
}

pub fn run_baseline(set: &LabeledEmbeddingSet, config: &BaselineConfig) -> Result<Augmentation> {
    config.validate()?;
    match config.method {
        BaselineMethod::Upsample => upsample(set, config),
        BaselineMethod::Noise => gaussian_noise(set, config),
        BaselineMethod::Smote => smote(set, config),
        BaselineMethod::MixupH => mixup_h(set, config),
        BaselineMethod::WithinExtrapolate => within_extrapolate(set, config),
        BaselineMethod::LinearDelta => linear_delta(set, config),
        BaselineMethod::Ge3 => ge3(set, config),
    }
}

/// Per-class view used by the balancing methods.
struct ClassView<'a> {
    rows: Vec<Vec<&'a [f32]>>,
    majority: usize,
}

impl<'a> ClassView<'a> {
    fn new(set: &'a LabeledEmbeddingSet) -> Result<Self> {
        require_nonempty(set)?;
        let mut rows = vec![Vec::new(); set.num_classes()];
        for (label, v) in set.iter() {
            rows[label].push(v);
        }
        let majority = rows.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Self { rows, majority })
    }

    fn deficit(&self, class: usize) -> usize {
        self.majority - self.rows[class].len()
    }
}

fn one_hot(k: usize, class: usize) -> Vec<f32> {
    let mut v = vec![0f32; k];
    v[class] = 1.0;
    v
}

fn to_f32(v: impl IntoIterator<Item = f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

/// Drives a balancing method: for each minority class, `make` receives the
/// class rows, a round-robin base index and the class stream, and returns the
/// new vector with its soft label.
fn balance<F>(
    set: &LabeledEmbeddingSet,
    config: &BaselineConfig,
    mut make: F,
) -> Result<Augmentation>
where
    F: FnMut(usize, &[&[f32]], usize, &mut StreamRng, &mut Vec<String>) -> (Vec<f32>, Vec<f32>),
{
    let view = ClassView::new(set)?;
    let k = set.num_classes();
    let mut out = SoftLabeledSet::empty(set.dim(), set.vocab().clone());
    let mut warnings = Vec::new();
    let tag = rng::tag(config.method.name());
    for class in 0..k {
        let deficit = view.deficit(class);
        if deficit == 0 {
            continue;
        }
        let rows = &view.rows[class];
        let mut rng = rng::stream(config.seed, &[tag, class as u64]);
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut rng);
        for j in 0..deficit {
            let base = order[j % rows.len()];
            let (vector, label) = make(class, rows, base, &mut rng, &mut warnings);
            out.push(&label, &vector)?;
        }
    }
    for w in &warnings {
        log::warn!("{}: {w}", config.method.name());
    }
    Ok(Augmentation { set: out, warnings })
}

fn warn_once(warnings: &mut Vec<String>, message: String) {
    if !warnings.contains(&message) {
        warnings.push(message);
    }
}

/// Duplicates minority examples.
pub fn upsample(set: &LabeledEmbeddingSet, config: &BaselineConfig) -> Result<Augmentation> {
    let k = set.num_classes();
    balance(set, config, |class, rows, base, _, _| (rows[base].to_vec(), one_hot(k, class)))
}

/// Duplicates minority examples with i.i.d. Gaussian noise added per coordinate.
pub fn gaussian_noise(set: &LabeledEmbeddingSet, config: &BaselineConfig) -> Result<Augmentation> {
    let k = set.num_classes();
    let normal = Normal::new(0.0, config.noise_sigma)
        .map_err(|e| Error::Config(format!("noise_sigma: {e}")))?;
    balance(set, config, |class, rows, base, rng, _| {
        let v = to_f32(rows[base].iter().map(|&x| x as f64 + normal.sample(rng)));
        (v, one_hot(k, class))
    })
}

fn dist_sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// The `k` nearest rows to `rows[query]` by Euclidean distance, excluding the
/// query itself; ties go to the lower index.
pub fn nearest_neighbors(rows: &[&[f32]], query: usize, k: usize) -> Vec<usize> {
    let mut candidates: Vec<(f64, usize)> = (0..rows.len())
        .filter(|&j| j != query)
        .map(|j| (dist_sq(rows[query], rows[j]), j))
        .collect();
    let k = k.min(candidates.len());
    if k == 0 {
        return Vec::new();
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    candidates.select_nth_unstable_by(k - 1, cmp);
    candidates.truncate(k);
    candidates.sort_by(cmp);
    candidates.into_iter().map(|(_, j)| j).collect()
}

/// Interpolates each base example toward one of its nearest same-class neighbors.
pub fn smote(set: &LabeledEmbeddingSet, config: &BaselineConfig) -> Result<Augmentation> {
    let k = set.num_classes();
    let mut cache: Vec<Option<Vec<Vec<usize>>>> = vec![None; k];
    balance(set, config, |class, rows, base, rng, warnings| {
        if rows.len() < 2 {
            warn_once(
                warnings,
                format!("class {class} has a single example; duplicating instead of SMOTE"),
            );
            return (rows[base].to_vec(), one_hot(k, class));
        }
        let neighbors = cache[class].get_or_insert_with(|| {
            let kk = config.smote_k.min(rows.len() - 1);
            (0..rows.len()).map(|i| nearest_neighbors(rows, i, kk)).collect()
        });
        let nb = &neighbors[base];
        let other = rows[nb[rng.random_range(0..nb.len())]];
        let u: f64 = rng.random();
        let x = rows[base];
        let v = to_f32(
            x.iter()
                .zip(other)
                .map(|(&a, &b)| a as f64 + u * (b as f64 - a as f64)),
        );
        (v, one_hot(k, class))
    })
}

/// Mixes a minority example with an example of another class.
///
/// The mixing weight is `max(l, 1 - l)` for `l ~ Beta(alpha, alpha)`, so the
/// minority example always dominates and the new example counts toward its
/// class.
pub fn mixup_h(set: &LabeledEmbeddingSet, config: &BaselineConfig) -> Result<Augmentation> {
    let k = set.num_classes();
    let beta = Beta::new(config.mixup_alpha, config.mixup_alpha)
        .map_err(|e| Error::Config(format!("mixup_alpha: {e}")))?;
    let others: Vec<(usize, &[f32])> = set.iter().collect();
    balance(set, config, |class, rows, base, rng, _| {
        let pool_size = others.iter().filter(|(l, _)| *l != class).count();
        let pick = rng.random_range(0..pool_size);
        let (other_class, other) = others
            .iter()
            .filter(|(l, _)| *l != class)
            .nth(pick)
            .copied()
            .expect("pick is within the pool");
        let l: f64 = beta.sample(rng);
        mix_pair(rows[base], class, other, other_class, l.max(1.0 - l), k)
    })
}

/// `(l x_i + (1 - l) x_j, l y_i + (1 - l) y_j)` for one-hot `y`.
pub fn mix_pair(
    xi: &[f32],
    ci: usize,
    xj: &[f32],
    cj: usize,
    lambda: f64,
    k: usize,
) -> (Vec<f32>, Vec<f32>) {
    let v = to_f32(
        xi.iter()
            .zip(xj)
            .map(|(&a, &b)| lambda * a as f64 + (1.0 - lambda) * b as f64),
    );
    let mut label = vec![0f64; k];
    label[ci] += lambda;
    label[cj] += 1.0 - lambda;
    (v, to_f32(label))
}

/// `lambda (x_i - x_j) + x_i`.
pub fn within_extrapolate_point(xi: &[f32], xj: &[f32], lambda: f64) -> Vec<f32> {
    to_f32(
        xi.iter()
            .zip(xj)
            .map(|(&a, &b)| lambda * (a as f64 - b as f64) + a as f64),
    )
}

pub fn within_extrapolate(
    set: &LabeledEmbeddingSet,
    config: &BaselineConfig,
) -> Result<Augmentation> {
    let k = set.num_classes();
    balance(set, config, |class, rows, base, rng, warnings| {
        if rows.len() < 2 {
            warn_once(
                warnings,
                format!("class {class} has a single example; duplicating instead of WE"),
            );
            return (rows[base].to_vec(), one_hot(k, class));
        }
        let mut j = rng.random_range(0..rows.len() - 1);
        if j >= base {
            j += 1;
        }
        (
            within_extrapolate_point(rows[base], rows[j], config.we_lambda),
            one_hot(k, class),
        )
    })
}

/// `(x_i - x_j) + x_k`.
pub fn linear_delta_point(xi: &[f32], xj: &[f32], xk: &[f32]) -> Vec<f32> {
    to_f32(
        xi.iter()
            .zip(xj)
            .zip(xk)
            .map(|((&a, &b), &c)| (a as f64 - b as f64) + c as f64),
    )
}

/// Adds the difference of two class members to a third (the round-robin base).
pub fn linear_delta(set: &LabeledEmbeddingSet, config: &BaselineConfig) -> Result<Augmentation> {
    let k = set.num_classes();
    balance(set, config, |class, rows, base, rng, warnings| {
        let n = rows.len();
        let (i, j) = if n >= 3 {
            let picks = rand::seq::index::sample(rng, n - 1, 2);
            let lift = |p: usize| if p >= base { p + 1 } else { p };
            (lift(picks.index(0)), lift(picks.index(1)))
        } else {
            warn_once(
                warnings,
                format!("class {class} has {n} examples; sampling LD triples with replacement"),
            );
            (rng.random_range(0..n), rng.random_range(0..n))
        };
        (linear_delta_point(rows[i], rows[j], rows[base]), one_hot(k, class))
    })
}

/// Mean-shift extrapolation: `x - mean_s + mean_t` for every ordered class pair.
///
/// Uses the same pair and record order as [`crate::reprint::augment_dataset`].
pub fn ge3(set: &LabeledEmbeddingSet, _config: &BaselineConfig) -> Result<Augmentation> {
    require_nonempty(set)?;
    let k = set.num_classes();
    let means = (0..k)
        .map(|c| class_mean(set, c))
        .collect::<Result<Vec<_>>>()?;
    let mut out = SoftLabeledSet::empty(set.dim(), set.vocab().clone());
    for (s, t) in class_pairs(k) {
        let label = one_hot(k, t);
        for (_, x) in set.iter().filter(|(l, _)| *l == s) {
            let v = to_f32(
                x.iter()
                    .zip(&means[s])
                    .zip(&means[t])
                    .map(|((&x, &ms), &mt)| (x as f64 - ms) + mt),
            );
            out.push(&label, &v)?;
        }
    }
    Ok(Augmentation {
        set: out,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ClassVocabulary;

    fn set_from(k: usize, dim: usize, rows: &[(usize, Vec<f32>)]) -> LabeledEmbeddingSet {
        let names: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
        let labels = rows.iter().map(|r| r.0).collect();
        let data = rows.iter().flat_map(|r| r.1.clone()).collect();
        LabeledEmbeddingSet::from_parts(dim, ClassVocabulary::new(names).unwrap(), labels, data)
            .unwrap()
    }

    fn imbalanced(minority: usize, majority: usize, dim: usize) -> LabeledEmbeddingSet {
        let mut rows = Vec::new();
        for i in 0..minority {
            rows.push((0, (0..dim).map(|j| (i * dim + j) as f32 * 0.1).collect()));
        }
        for i in 0..majority {
            rows.push((1, (0..dim).map(|j| 5.0 + (i + j) as f32 * 0.05).collect()));
        }
        set_from(2, dim, &rows)
    }

    fn final_counts(set: &LabeledEmbeddingSet, aug: &Augmentation) -> Vec<usize> {
        let mut counts = set.class_counts();
        for l in aug.set.argmax_labels() {
            counts[l] += 1;
        }
        counts
    }

    #[test]
    fn upsample_counts_and_duplicates() {
        let set = imbalanced(2, 10, 3);
        let aug = upsample(&set, &BaselineConfig::new(BaselineMethod::Upsample)).unwrap();
        assert_eq!(aug.set.len(), 8);
        assert_eq!(final_counts(&set, &aug), vec![10, 10]);
        for i in 0..aug.set.len() {
            let v = aug.set.vector(i);
            assert!((0..2).any(|j| set.vector(j) == v));
        }
        let balanced = imbalanced(4, 4, 2);
        let aug = upsample(&balanced, &BaselineConfig::new(BaselineMethod::Upsample)).unwrap();
        assert!(aug.set.is_empty());
    }

    #[test]
    fn noise_with_tiny_sigma_is_upsampling() {
        let set = imbalanced(3, 9, 4);
        let mut cfg = BaselineConfig::new(BaselineMethod::Noise);
        cfg.noise_sigma = 1e-300;
        let noisy = gaussian_noise(&set, &cfg).unwrap();
        // Same stream key, so the same bases are chosen.
        let up = balance(&set, &cfg, |class, rows, base, _, _| {
            (rows[base].to_vec(), one_hot(2, class))
        })
        .unwrap();
        assert_eq!(noisy.set.data(), up.set.data());
        assert!(noisy.set.argmax_labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn smote_on_segment() {
        let set = set_from(
            2,
            2,
            &[
                (0, vec![0.0, 0.0]),
                (0, vec![2.0, 1.0]),
                (1, vec![5.0, 5.0]),
                (1, vec![5.0, 6.0]),
                (1, vec![6.0, 5.0]),
                (1, vec![6.0, 6.0]),
                (1, vec![7.0, 7.0]),
            ],
        );
        let aug = smote(&set, &BaselineConfig::new(BaselineMethod::Smote)).unwrap();
        assert_eq!(aug.set.len(), 3);
        for i in 0..aug.set.len() {
            let v = aug.set.vector(i);
            // On the segment from (0,0) to (2,1): y = x / 2, x in [0, 2].
            assert!((v[1] - v[0] / 2.0).abs() < 1e-6);
            assert!((0.0..=2.0).contains(&v[0]));
        }
    }

    #[test]
    fn smote_single_example_falls_back_with_warning() {
        let set = imbalanced(1, 4, 2);
        let aug = smote(&set, &BaselineConfig::new(BaselineMethod::Smote)).unwrap();
        assert_eq!(aug.set.len(), 3);
        assert_eq!(aug.warnings.len(), 1);
        for i in 0..3 {
            assert_eq!(aug.set.vector(i), set.vector(0));
        }
    }

    #[test]
    fn nearest_neighbors_excludes_self_and_breaks_ties_low() {
        let pts: Vec<Vec<f32>> = vec![vec![0.0], vec![1.0], vec![-1.0], vec![3.0]];
        let rows: Vec<&[f32]> = pts.iter().map(Vec::as_slice).collect();
        assert_eq!(nearest_neighbors(&rows, 0, 2), vec![1, 2]);
        assert_eq!(nearest_neighbors(&rows, 0, 10), vec![1, 2, 3]);
    }

    #[test]
    fn mixup_endpoint_and_convexity() {
        let (v, y) = mix_pair(&[1.0, 2.0], 0, &[3.0, -2.0], 1, 1.0, 3);
        assert_eq!(v, vec![1.0, 2.0]);
        assert_eq!(y, vec![1.0, 0.0, 0.0]);
        let set = imbalanced(3, 12, 3);
        let aug = mixup_h(&set, &BaselineConfig::new(BaselineMethod::MixupH)).unwrap();
        assert_eq!(final_counts(&set, &aug), vec![12, 12]);
        let (lo, hi) = set.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        for i in 0..aug.set.len() {
            let s: f32 = aug.set.soft_label(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(aug.set.vector(i).iter().all(|&x| x >= lo && x <= hi));
        }
    }

    #[test]
    fn within_extrapolate_examples() {
        assert_eq!(within_extrapolate_point(&[2.0, 0.0], &[0.0, 0.0], 0.5), vec![3.0, 0.0]);
        assert_eq!(within_extrapolate_point(&[2.0, 1.0], &[2.0, 1.0], 0.5), vec![2.0, 1.0]);
        assert_eq!(within_extrapolate_point(&[2.0, 1.0], &[7.0, 3.0], 0.0), vec![2.0, 1.0]);
        let set = imbalanced(1, 3, 2);
        let aug = within_extrapolate(&set, &BaselineConfig::new(BaselineMethod::WithinExtrapolate))
            .unwrap();
        assert_eq!(aug.warnings.len(), 1);
        assert_eq!(aug.set.len(), 2);
    }

    #[test]
    fn linear_delta_examples() {
        assert_eq!(linear_delta_point(&[3.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]), vec![2.0, 0.0]);
        assert_eq!(linear_delta_point(&[3.0, 1.0], &[3.0, 1.0], &[4.0, 5.0]), vec![4.0, 5.0]);
        let set = imbalanced(2, 6, 2);
        let aug = linear_delta(&set, &BaselineConfig::new(BaselineMethod::LinearDelta)).unwrap();
        assert_eq!(aug.warnings.len(), 1);
        assert_eq!(final_counts(&set, &aug), vec![6, 6]);
    }

    #[test]
    fn ge3_examples() {
        let set = set_from(
            2,
            2,
            &[
                (0, vec![2.0, 0.0]),
                (0, vec![0.0, 0.0]),
                (1, vec![5.0, 5.0]),
            ],
        );
        let aug = ge3(&set, &BaselineConfig::new(BaselineMethod::Ge3)).unwrap();
        assert_eq!(aug.set.len(), 3);
        // mean_0 = (1, 0), mean_1 = (5, 5)
        assert_eq!(aug.set.vector(0), &[6.0, 5.0]);
        assert_eq!(aug.set.soft_label(0), &[0.0, 1.0]);
        // Class-1 example equals its mean, so it maps exactly onto mean_0.
        assert_eq!(aug.set.vector(2), &[1.0, 0.0]);
        assert_eq!(aug.set.soft_label(2), &[1.0, 0.0]);
    }

    #[test]
    fn empty_class_rejected_everywhere() {
        let set = set_from(3, 1, &[(0, vec![1.0]), (1, vec![2.0])]);
        for method in BaselineMethod::ALL {
            assert!(matches!(
                run_baseline(&set, &BaselineConfig::new(method)),
                Err(Error::EmptyClass { class: 2 })
            ));
        }
    }

    #[test]
    fn every_balancing_method_is_deterministic_and_exact() {
        let set = imbalanced(5, 17, 4);
        for method in BaselineMethod::ALL {
            let mut cfg = BaselineConfig::new(method);
            cfg.seed = 99;
            let a = run_baseline(&set, &cfg).unwrap();
            let b = run_baseline(&set, &cfg).unwrap();
            assert_eq!(a.set, b.set, "{method:?}");
            if method != BaselineMethod::Ge3 {
                assert_eq!(final_counts(&set, &a), vec![17, 17], "{method:?}");
            }
        }
    }
}
