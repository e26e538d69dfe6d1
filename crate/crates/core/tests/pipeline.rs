use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reprint_core::baselines::{linear_delta, nearest_neighbors};
use reprint_core::embedding::read_any_binary;
use reprint_core::harness::{
    export_2d, run_benchmark, synth_dataset, BenchOptions, MethodSpec, SynthSpec,
};
use reprint_core::{
    augment_dataset, fit_class_geometry, read_embeddings, run_baseline, train, write_embeddings,
    write_soft, BaselineConfig, BaselineMethod, ClassVocabulary, Format, LabeledEmbeddingSet,
    MlpConfig, RankPolicy, ReprintConfig, TrainedModel,
};

fn vocab(k: usize) -> ClassVocabulary {
    ClassVocabulary::new((0..k).map(|c| format!("c{c}"))).unwrap()
}

fn set_from(k: usize, dim: usize, rows: &[(usize, Vec<f32>)]) -> LabeledEmbeddingSet {
    let mut set = LabeledEmbeddingSet::empty(dim, vocab(k));
    for (l, v) in rows {
        set.push(*l, v).unwrap();
    }
    set
}

fn mean_cov(rows: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let cov = DMatrix::from_fn(d, d, |i, j| {
        rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1.0)
    });
    (mean, cov)
}

#[test]
fn top_component_matches_covariance_eigenvector() {
    let set = set_from(
        2,
        3,
        &[
            (0, vec![1.0, 0.0, 0.0]),
            (0, vec![-1.0, 0.0, 0.0]),
            (0, vec![0.0, 0.1, 0.0]),
            (0, vec![0.0, -0.1, 0.0]),
            (1, vec![5.0, 5.0, 5.0]),
            (1, vec![6.0, 5.0, 5.0]),
        ],
    );
    let rows: Vec<Vec<f64>> = (0..4)
        .map(|i| set.vector(i).iter().map(|&v| v as f64).collect())
        .collect();
    let eig = SymmetricEigen::new(mean_cov(&rows).1);
    let top = eig.eigenvalues.imax();
    let oracle = eig.eigenvectors.column(top);
    let g = fit_class_geometry(&set, 0, RankPolicy::Fixed(1)).unwrap();
    let c = &g.components()[0];
    let cos: f64 = c.iter().zip(oracle.iter()).map(|(a, b)| a * b).sum();
    assert!(cos.abs() > 1.0 - 1e-12);
    assert_eq!(c, &vec![1.0, 0.0, 0.0]);
}

#[test]
fn smote_neighbors_match_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<Vec<f32>> = (0..10)
        .map(|_| (0..4).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    let refs: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
    for q in 0..10 {
        let mut dists: Vec<(f64, usize)> = (0..10)
            .filter(|&j| j != q)
            .map(|j| {
                let d: f64 = rows[q]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum();
                (d, j)
            })
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle: Vec<usize> = dists[..3].iter().map(|p| p.1).collect();
        assert_eq!(nearest_neighbors(&refs, q, 3), oracle);
    }
}

#[test]
fn linear_delta_mean_converges_to_class_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows = Vec::new();
    for _ in 0..12 {
        rows.push((0, vec![rng.random_range(-2.0f32..2.0), rng.random_range(0.0f32..4.0)]));
    }
    for _ in 0..100_012 {
        rows.push((1, vec![rng.random_range(-1.0f32..1.0), rng.random_range(-1.0f32..1.0)]));
    }
    let set = set_from(2, 2, &rows);
    let minority: Vec<Vec<f64>> = rows[..12]
        .iter()
        .map(|(_, v)| v.iter().map(|&x| x as f64).collect())
        .collect();
    let (mu, _) = mean_cov(&minority);

    let cfg = BaselineConfig {
        seed: 17,
        ..BaselineConfig::new(BaselineMethod::LinearDelta)
    };
    let out = linear_delta(&set, &cfg).unwrap().set;
    assert_eq!(out.len(), 100_000);
    let samples: Vec<Vec<f64>> = (0..out.len())
        .map(|i| out.vector(i).iter().map(|&x| x as f64).collect())
        .collect();
    let (mean, cov) = mean_cov(&samples);
    let m = samples.len() as f64;
    for j in 0..2 {
        let tol = 3.0 * cov[(j, j)].sqrt() / m.sqrt();
        assert!((mean[j] - mu[j]).abs() <= tol, "coord {j}: {} vs {}", mean[j], mu[j]);
    }
}

#[test]
fn ge3_preserves_source_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rows = Vec::new();
    for c in 0..3 {
        for _ in 0..40 {
            let v: Vec<f32> = (0..3)
                .map(|j| c as f32 * 4.0 + rng.random_range(-1.0f32..1.0) * (j + 1) as f32)
                .collect();
            rows.push((c, v));
        }
    }
    let set = set_from(3, 3, &rows);
    let out = run_baseline(&set, &BaselineConfig::new(BaselineMethod::Ge3)).unwrap().set;
    assert_eq!(out.len(), 120 * 2);
    let as_f64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let source: Vec<Vec<f64>> = rows[..40].iter().map(|(_, v)| as_f64(v)).collect();
    let target: Vec<Vec<f64>> = rows[40..80].iter().map(|(_, v)| as_f64(v)).collect();
    // The pair (0, 1) comes first.
    let shifted: Vec<Vec<f64>> = (0..40).map(|i| as_f64(out.vector(i))).collect();
    let (_, cov_s) = mean_cov(&source);
    let (mean_t, _) = mean_cov(&target);
    let (mean_o, cov_o) = mean_cov(&shifted);
    assert!((cov_s - cov_o).abs().max() < 1e-4);
    for j in 0..3 {
        assert!((mean_o[j] - mean_t[j]).abs() < 1e-4);
    }
}

#[test]
fn export_keeps_separated_clusters_apart() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cluster = |offset: f32| -> Vec<Vec<f32>> {
        (0..60)
            .map(|_| (0..6).map(|j| offset * (j % 2) as f32 + rng.random_range(-1.0f32..1.0)).collect())
            .collect()
    };
    let sets = vec![("a".to_string(), cluster(0.0)), ("b".to_string(), cluster(8.0))];
    let pts = export_2d(&sets).unwrap();
    assert_eq!(pts.len(), 120);

    let dist = |i: usize, j: usize| ((pts[i].x - pts[j].x).powi(2) + (pts[i].y - pts[j].y).powi(2)).sqrt();
    let mut total = 0.0;
    for i in 0..pts.len() {
        let mut by_name: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for j in 0..pts.len() {
            if i != j {
                let e = by_name.entry(&pts[j].name).or_default();
                e.0 += dist(i, j);
                e.1 += 1;
            }
        }
        let own = by_name[pts[i].name.as_str()];
        let a = own.0 / own.1 as f64;
        let b = by_name
            .iter()
            .filter(|(n, _)| **n != pts[i].name)
            .map(|(_, (s, c))| s / *c as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    let silhouette = total / pts.len() as f64;
    assert!(silhouette > 0.0, "silhouette {silhouette}");
}

fn parse_csv(bytes: &[u8]) -> Vec<Vec<String>> {
    String::from_utf8(bytes.to_vec())
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn summary_matches_recomputation_from_rows() {
    let spec = SynthSpec {
        train_per_class: 60,
        test_per_class: 30,
        seed: 8,
        ..SynthSpec::planted(3, 6, &[4.0, 2.0], 0.3)
    };
    let (pool, test) = synth_dataset(&spec).unwrap();
    let methods: Vec<MethodSpec> = ["none", "reprint", "smote"]
        .iter()
        .map(|m| MethodSpec::by_name(m).unwrap())
        .collect();
    let mlp = MlpConfig {
        hidden_sizes: vec![16],
        epochs: 3,
        ..Default::default()
    };
    let options = BenchOptions::new("toy", 40);
    let report = run_benchmark(&pool, &test, &methods, &[5, 10], &[0, 1, 2], &mlp, &options).unwrap();
    assert_eq!(report.rows.len(), 3 * 2 * 3);

    let mut rows_csv = Vec::new();
    report.write_rows_csv(&mut rows_csv).unwrap();
    let mut summary_csv = Vec::new();
    report.write_summary_csv(&mut summary_csv).unwrap();

    let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in parse_csv(&rows_csv) {
        let acc: f64 = r[4].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
        groups.entry((r[1].clone(), r[2].parse().unwrap())).or_default().push(acc);
    }
    let summary = parse_csv(&summary_csv);
    assert_eq!(summary.len(), groups.len());
    for s in summary {
        let values = &groups[&(s[1].clone(), s[2].parse().unwrap())];
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((s[3].parse::<f64>().unwrap() - mean).abs() < 1e-12);
        assert!((s[4].parse::<f64>().unwrap() - var.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn file_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        train_per_class: 40,
        test_per_class: 20,
        ..SynthSpec::planted(3, 5, &[3.0, 1.0], 0.2)
    };
    let (pool, test) = synth_dataset(&spec).unwrap();
    let pool_path = dir.path().join("pool.emb");
    let jsonl_path = dir.path().join("pool.jsonl");
    write_embeddings(&pool, &pool_path, Format::Binary).unwrap();
    write_embeddings(&pool, &jsonl_path, Format::Jsonl).unwrap();
    let back = read_embeddings(&pool_path, Format::Binary).unwrap();
    assert_eq!(back, pool);
    assert_eq!(read_embeddings(&jsonl_path, Format::Jsonl).unwrap(), pool);

    let cfg = ReprintConfig {
        source_policy: RankPolicy::Fixed(2),
        target_policy: RankPolicy::Fixed(2),
        ..Default::default()
    };
    let mut train_set = back.to_soft();
    train_set.extend(&augment_dataset(&back, &cfg).unwrap()).unwrap();
    let aug_path = dir.path().join("aug.embs");
    write_soft(&train_set, &aug_path).unwrap();
    let train_back = read_any_binary(&aug_path).unwrap();
    assert_eq!(train_back.len(), 120 + 120 * 2);

    let model = train(&train_back, &MlpConfig { epochs: 2, ..Default::default() }).unwrap();
    let model_path = dir.path().join("model.bin");
    model.save(&model_path).unwrap();
    let loaded = TrainedModel::load(&model_path).unwrap();
    for i in 0..test.len() {
        assert_eq!(model.predict(test.vector(i)).unwrap(), loaded.predict(test.vector(i)).unwrap());
    }
}
