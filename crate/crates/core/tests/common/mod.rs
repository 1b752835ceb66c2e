//! Oracle checks shared by the integration tests and the acceptance runner.
//! Each `check_*` returns `Err(reason)` on the first violated property.

// negated float comparisons are deliberate: NaN must fail a check
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use fedlake_core::catalog::AttributeKind;
use fedlake_core::datanode::{
    CacheRequest, CacheSettings, ColumnDef, DataNode, EvaluateRequest, EvalModel, RoundRequest, TreeRequest,
};
use fedlake_core::federation::{fedavg, AggregationMode, ClientUpdate, CountTree, MergedPayload};
use fedlake_core::mlcore::linear::{gradient, loss, sgd_step};
use fedlake_core::mlcore::metrics::{binary_auc, compute_metrics};
use fedlake_core::mlcore::resample::{adasyn, smote_with_gap};
use fedlake_core::mlcore::{
    chi_squared_imbalance, rng_from_seed, train_test_split, BalanceConfig, BalanceMethod, BatchMode, ModelKind,
    ParameterVector, TrainConfig,
};
use fedlake_core::synthcohort::{default_cohort_spec, generate, Cohort, CohortSpec};
use fedlake_core::{
    AnalyticalQuery, CatalogStore, Comparator, Coordinator, FederationConfig, GlobalSchema, NodeClient, Pattern,
    Predicate, Row, TrainingJob, Value,
};
use rand::Rng;

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn default_cohort() -> &'static Cohort {
    static COHORT: OnceLock<Cohort> = OnceLock::new();
    COHORT.get_or_init(|| generate(&default_cohort_spec()).expect("default spec generates"))
}

pub fn in_process(cohort: &Cohort, config: FederationConfig) -> (Coordinator, Vec<Arc<DataNode>>) {
    let nodes: Vec<Arc<DataNode>> = cohort.data_nodes().unwrap().into_iter().map(Arc::new).collect();
    let clients = nodes.iter().map(|n| n.clone() as Arc<dyn NodeClient>).collect();
    let catalog = Arc::new(cohort.catalog().unwrap());
    (Coordinator::new(catalog, clients, config), nodes)
}

fn pooled_coordinator(cohort: &Cohort) -> Coordinator {
    let node = cohort.pooled_node("pooled").unwrap();
    let catalog = CatalogStore::new(cohort.schema.clone(), vec![node.mapping().clone()]).unwrap();
    Coordinator::new(
        Arc::new(catalog),
        vec![Arc::new(node) as Arc<dyn NodeClient>],
        FederationConfig::default(),
    )
}

// ---- query equivalence ----

pub fn random_query<R: Rng>(schema: &GlobalSchema, rng: &mut R) -> AnalyticalQuery {
    let categorical: Vec<&str> = schema
        .attributes
        .iter()
        .filter(|a| a.kind == AttributeKind::Categorical)
        .map(|a| a.name.as_str())
        .collect();
    let n_terms = rng.random_range(0..=3);
    let mut filter = Vec::new();
    for _ in 0..n_terms {
        let attr = &schema.attributes[rng.random_range(0..schema.attributes.len())];
        let p = if attr.kind == AttributeKind::Categorical {
            let op = if rng.random_bool(0.7) { Comparator::Eq } else { Comparator::Ne };
            let v = &attr.vocabulary[rng.random_range(0..attr.vocabulary.len())];
            Predicate::new(&attr.name, op, Value::text(v.clone()))
        } else {
            let [lo, hi] = attr.range.unwrap_or([0.0, 100.0]);
            let ops = [
                Comparator::Eq,
                Comparator::Ne,
                Comparator::Lt,
                Comparator::Le,
                Comparator::Gt,
                Comparator::Ge,
            ];
            let op = ops[rng.random_range(0..ops.len())];
            Predicate::new(&attr.name, op, Value::Int(rng.random_range(lo as i64..=hi as i64)))
        };
        filter.push(p);
    }
    if rng.random_bool(0.5) {
        AnalyticalQuery {
            pattern: Pattern::Retrieve,
            filter,
            target: None,
            group_by: Vec::new(),
        }
    } else {
        let mut pool = categorical.clone();
        let mut take = |rng: &mut R| pool.remove(rng.random_range(0..pool.len())).to_string();
        let target = take(rng);
        let depth = rng.random_range(1..=2);
        let group_by = (0..depth).map(|_| take(rng)).collect();
        AnalyticalQuery {
            pattern: Pattern::TreeInsight,
            filter,
            target: Some(target),
            group_by,
        }
    }
}

pub type PathCounts = BTreeMap<Vec<String>, BTreeMap<String, u64>>;

pub fn flatten(tree: &CountTree) -> PathCounts {
    fn walk(t: &CountTree, path: &mut Vec<String>, out: &mut PathCounts) {
        match t {
            CountTree::Leaf { counts, .. } => {
                if counts.values().any(|&c| c > 0) {
                    out.insert(path.clone(), counts.clone());
                }
            }
            CountTree::Branch { children, .. } => {
                for (k, child) in children {
                    path.push(k.clone());
                    walk(child, path, out);
                    path.pop();
                }
            }
        }
    }
    let mut out = PathCounts::new();
    walk(tree, &mut Vec::new(), &mut out);
    out
}

fn oracle_counts(q: &AnalyticalQuery, rows: &[&Row]) -> PathCounts {
    let target = q.target.as_deref().unwrap();
    let mut out = PathCounts::new();
    for r in rows {
        let keys: Option<Vec<String>> = q
            .group_by
            .iter()
            .map(|g| r.get(g).and_then(Value::as_text).map(str::to_string))
            .collect();
        let (Some(path), Some(t)) = (keys, r.get(target).and_then(Value::as_text)) else {
            continue;
        };
        *out.entry(path).or_default().entry(t.to_string()).or_insert(0) += 1;
    }
    out
}

/// Random RETRIEVE / TREE_INSIGHT queries against the federation versus a
/// filter over the concatenated global table.
pub fn check_query_equivalence(n: usize, seed: u64, budget: Duration) -> Check {
    let cohort = default_cohort();
    let (coord, _) = in_process(cohort, FederationConfig::default());
    let central: Vec<Row> = cohort.nodes.iter().flat_map(|n| n.records.iter().map(|r| r.to_row())).collect();
    let mut rng = rng_from_seed(seed);
    let start = Instant::now();
    for i in 0..n {
        let q = random_query(&cohort.schema, &mut rng);
        let text = q.render();
        let res = coord.run_federated_query(&text).map_err(|e| format!("{text}: {e}"))?;
        ensure!(!res.partial, "{text}: partial result");
        let matching: Vec<&Row> = central.iter().filter(|r| q.filter.iter().all(|p| p.matches(r))).collect();
        match &res.merged {
            MergedPayload::Rows { count, rows } => {
                let mut got = rows.clone();
                got.sort();
                let mut want: Vec<Row> = matching.iter().map(|r| (*r).clone()).collect();
                want.sort();
                ensure!(*count == want.len(), "query {i} `{text}`: count {count} != {}", want.len());
                ensure!(got == want, "query {i} `{text}`: row multisets differ");
            }
            MergedPayload::CountTree { tree, total, .. } => {
                let want = oracle_counts(&q, &matching);
                let want_total: u64 = want.values().flat_map(|c| c.values()).sum();
                ensure!(*total == want_total, "query {i} `{text}`: total {total} != {want_total}");
                ensure!(flatten(tree) == want, "query {i} `{text}`: tree counts differ");
            }
            other => return Err(format!("query {i} `{text}`: unexpected payload {other:?}")),
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed <= budget, "took {elapsed:?}, budget {budget:?}");
    Ok(format!("{n} queries in {:.1}s", elapsed.as_secs_f64()))
}

// ---- FedAvg algebra ----

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn update(id: &str, params: Vec<f64>, n: usize) -> ClientUpdate {
    ClientUpdate {
        node_id: id.into(),
        params,
        n_train: n,
    }
}

pub fn check_fedavg_algebra(draws: usize, seed: u64) -> Check {
    const TOL: f64 = 1e-12;
    // hand-computed means
    let a = update("a", vec![1.0, 2.0, 3.0], 10);
    let b = update("b", vec![3.0, 6.0, -3.0], 30);
    let c = update("c", vec![-1.0, 1.0, 0.5], 60);
    let unweighted = fedavg(&[a.clone(), b.clone(), c.clone()], AggregationMode::Unweighted).map_err(|e| e.to_string())?;
    ensure!(close(&unweighted, &[1.0, 3.0, 0.5 / 3.0], TOL), "unweighted mean {unweighted:?}");
    let weighted = fedavg(&[a.clone(), b.clone(), c.clone()], AggregationMode::SampleWeighted).map_err(|e| e.to_string())?;
    // (10*[1,2,3] + 30*[3,6,-3] + 60*[-1,1,0.5]) / 100
    ensure!(close(&weighted, &[0.4, 2.6, -0.3], TOL), "weighted mean {weighted:?}");

    let mut rng = rng_from_seed(seed);
    for _ in 0..draws {
        let dim = rng.random_range(1..20);
        let n = rng.random_range(1..8);
        let ups: Vec<ClientUpdate> = (0..n)
            .map(|i| {
                let p = (0..dim).map(|_| rng.random_range(-1e3..1e3)).collect();
                update(&format!("n{i}"), p, rng.random_range(1..1000))
            })
            .collect();
        for mode in [AggregationMode::Unweighted, AggregationMode::SampleWeighted] {
            let avg = fedavg(&ups, mode).map_err(|e| e.to_string())?;
            // identity
            let one = fedavg(&ups[..1], mode).map_err(|e| e.to_string())?;
            ensure!(close(&one, &ups[0].params, TOL), "identity failed");
            // permutation invariance
            let mut perm = ups.clone();
            perm.reverse();
            perm.rotate_left(n / 2);
            let permuted = fedavg(&perm, mode).map_err(|e| e.to_string())?;
            ensure!(close(&avg, &permuted, TOL), "permutation changed the mean");
            // idempotence
            let same: Vec<ClientUpdate> = (0..n).map(|i| update(&format!("n{i}"), ups[0].params.clone(), ups[i].n_train)).collect();
            let idem = fedavg(&same, mode).map_err(|e| e.to_string())?;
            ensure!(close(&idem, &ups[0].params, TOL), "idempotence failed");
            // elementwise mean, computed independently
            let total: f64 = match mode {
                AggregationMode::Unweighted => n as f64,
                AggregationMode::SampleWeighted => ups.iter().map(|u| u.n_train as f64).sum(),
            };
            let expected: Vec<f64> = (0..dim)
                .map(|j| {
                    ups.iter()
                        .map(|u| {
                            let w = match mode {
                                AggregationMode::Unweighted => 1.0,
                                AggregationMode::SampleWeighted => u.n_train as f64,
                            };
                            w * u.params[j]
                        })
                        .sum::<f64>()
                        / total
                })
                .collect();
            let scale = expected.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            ensure!(close(&avg, &expected, TOL * scale), "mean mismatch: {avg:?} vs {expected:?}");
        }
    }
    Ok(format!("hand cases + {draws} random draws per mode"))
}

// ---- one-round centralized equivalence ----

fn two_node_spec(rows: [usize; 2]) -> CohortSpec {
    let mut spec = default_cohort_spec();
    spec.nodes.retain(|n| n.node_id != "france");
    for (n, r) in spec.nodes.iter_mut().zip(rows) {
        n.rows = r;
    }
    spec
}

fn one_round(rows: [usize; 2], mode: AggregationMode, kind: ModelKind) -> Result<f64, String> {
    let cohort = generate(&two_node_spec(rows)).map_err(|e| e.to_string())?;
    let (coord, nodes) = in_process(&cohort, FederationConfig::default());
    let lr = 0.5;
    let job = TrainingJob {
        rounds: Some(1),
        mode: Some(mode),
        train_config: TrainConfig {
            model: kind,
            learning_rate: lr,
            local_epochs: 1,
            batch: BatchMode::Full,
            l2: 0.0,
            ..TrainConfig::default()
        },
        cache: CacheSettings {
            balance: BalanceConfig {
                method: BalanceMethod::None,
                ..BalanceConfig::default()
            },
            ..CacheSettings::default()
        },
    };
    let pattern = Pattern::AeRisk;
    let model = coord.run_federated_training(pattern, &job).map_err(|e| e.to_string())?;
    let fed = model.params.as_ref().ok_or("no parameters")?;

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut sizes = Vec::new();
    for n in &nodes {
        let cache = n.cache(pattern).ok_or("no cache")?;
        xs.extend(cache.train_x.iter().cloned());
        ys.extend(cache.train_y.iter().copied());
        sizes.push(cache.train_x.len());
    }
    if mode == AggregationMode::Unweighted && sizes[0] != sizes[1] {
        return Err(format!("unequal node sizes {sizes:?}"));
    }
    let init = ParameterVector::zeros(kind, model.labels.len(), model.feature_width);
    let central = sgd_step(&init, &xs, &ys, lr, 0.0).map_err(|e| e.to_string())?;
    let max_diff = fed
        .values
        .iter()
        .zip(&central.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(max_diff)
}

pub fn check_one_round_equivalence() -> Check {
    let mut worst = 0.0f64;
    for kind in [ModelKind::Logistic, ModelKind::LinearSvmHinge] {
        let d = one_round([300, 300], AggregationMode::Unweighted, kind)?;
        ensure!(d <= 1e-9, "{kind:?} unweighted: max coordinate diff {d:e}");
        worst = worst.max(d);
        let d = one_round([200, 500], AggregationMode::SampleWeighted, kind)?;
        ensure!(d <= 1e-9, "{kind:?} sample-weighted: max coordinate diff {d:e}");
        worst = worst.max(d);
    }
    Ok(format!("max coordinate diff {worst:.1e}"))
}

// ---- gradients ----

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn check_gradients(draws: usize, seed: u64) -> Check {
    let mut rng = rng_from_seed(seed);
    let mut worst = 0.0f64;
    for kind in [ModelKind::Logistic, ModelKind::LinearSvmHinge] {
        for d in 0..draws {
            let k = rng.random_range(2..5);
            let w = rng.random_range(1..8);
            let n = rng.random_range(1..12);
            let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..w).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let l2 = rng.random_range(0.0..0.1);
            let zeros = ParameterVector::zeros(kind, k, w);
            let p = zeros.with_values((0..zeros.values.len()).map(|_| rng.random_range(-1.0..1.0)).collect());
            let analytic = gradient(&p, &xs, &ys, l2).map_err(|e| e.to_string())?;
            let h = 1e-6;
            let numeric: Vec<f64> = (0..p.values.len())
                .map(|i| {
                    let mut up = p.values.clone();
                    let mut down = p.values.clone();
                    up[i] += h;
                    down[i] -= h;
                    let lu = loss(&p.with_values(up), &xs, &ys, l2).unwrap();
                    let ld = loss(&p.with_values(down), &xs, &ys, l2).unwrap();
                    (lu - ld) / (2.0 * h)
                })
                .collect();
            let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
            let rel = norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12);
            ensure!(rel <= 1e-5, "{kind:?} draw {d}: relative error {rel:e}");
            worst = worst.max(rel);
        }
    }
    Ok(format!("{draws} draws per loss, worst relative error {worst:.1e}"))
}

// ---- accuracy band ----

#[derive(Debug, Clone)]
pub struct BandRow {
    pub pattern: Pattern,
    pub federated: f64,
    pub centralized: f64,
}

pub fn band_results(rounds: usize) -> Result<Vec<BandRow>, String> {
    let cohort = default_cohort();
    let (fed, _) = in_process(cohort, FederationConfig::default());
    let central = pooled_coordinator(cohort);
    let job = TrainingJob {
        rounds: Some(rounds),
        ..TrainingJob::default()
    };
    [Pattern::PredictTreatment, Pattern::AeRisk, Pattern::AeType]
        .into_iter()
        .map(|p| {
            let f = fed.run_federated_training(p, &job).map_err(|e| e.to_string())?;
            let c = central.run_federated_training(p, &job).map_err(|e| e.to_string())?;
            let acc = |m: &fedlake_core::GlobalModel| m.aggregated.as_ref().map_or(f64::NAN, |a| a.accuracy);
            Ok(BandRow {
                pattern: p,
                federated: acc(&f),
                centralized: acc(&c),
            })
        })
        .collect()
}

pub fn check_accuracy_band(rounds: usize, budget: Duration) -> Check {
    let start = Instant::now();
    let mut details = Vec::new();
    for r in band_results(rounds)? {
        details.push(format!("{} fed {:.3} / central {:.3}", r.pattern.slug(), r.federated, r.centralized));
        ensure!(
            (0.70..=0.90).contains(&r.federated),
            "{}: federated accuracy {:.4} outside [0.70, 0.90]",
            r.pattern.slug(),
            r.federated
        );
        ensure!(
            (r.federated - r.centralized).abs() <= 0.03,
            "{}: federated {:.4} vs centralized {:.4}",
            r.pattern.slug(),
            r.federated,
            r.centralized
        );
    }
    ensure!(start.elapsed() <= budget, "took {:?}", start.elapsed());
    Ok(format!("{} in {:.0}s", details.join(", "), start.elapsed().as_secs_f64()))
}

// ---- preprocessing ----

fn brute_knn(points: &[Vec<f64>], i: usize, k: usize) -> Vec<usize> {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut idx: Vec<usize> = (0..points.len()).filter(|&j| j != i).collect();
    idx.sort_by(|&a, &b| d(&points[i], &points[a]).total_cmp(&d(&points[i], &points[b])).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// `s = base + g (nb - base)` for some `g` in [0, 1].
fn on_segment(s: &[f64], base: &[f64], nb: &[f64]) -> bool {
    let dir: Vec<f64> = base.iter().zip(nb).map(|(a, b)| b - a).collect();
    let len2: f64 = dir.iter().map(|d| d * d).sum();
    if len2 == 0.0 {
        return close(s, base, 1e-9);
    }
    let g: f64 = s.iter().zip(base).zip(&dir).map(|((x, b), d)| (x - b) * d).sum::<f64>() / len2;
    let recon: Vec<f64> = base.iter().zip(&dir).map(|(b, d)| b + g * d).collect();
    (-1e-12..=1.0 + 1e-12).contains(&g) && close(s, &recon, 1e-9)
}

pub fn check_preprocessing(seed: u64) -> Check {
    let mut rng = rng_from_seed(seed);

    // SMOTE: each synthetic point lies on a segment to one of its base's k-NN
    for trial in 0..20 {
        let m = rng.random_range(6..40);
        let dim = rng.random_range(1..6);
        let k = rng.random_range(1..m.min(6));
        let pts: Vec<Vec<f64>> = (0..m).map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let n_syn = rng.random_range(1..100);
        let syn = smote_with_gap(&pts, k, n_syn, &mut rng, |r| r.random::<f64>()).map_err(|e| e.to_string())?;
        ensure!(syn.len() == n_syn, "SMOTE count");
        for (s_idx, s) in syn.iter().enumerate() {
            let base = s_idx % m;
            let ok = brute_knn(&pts, base, k).iter().any(|&j| on_segment(s, &pts[base], &pts[j]));
            ensure!(ok, "SMOTE trial {trial}: sample {s_idx} not between its base and a k-NN");
        }
    }

    // ADASYN: sum g_i within |minority| of G
    for trial in 0..20 {
        let n_min = rng.random_range(3..20);
        let n_maj = rng.random_range(n_min + 1..80);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_min + n_maj {
            let y = usize::from(i >= n_min);
            rows.push(vec![rng.random_range(-1.0..1.0) + y as f64, rng.random_range(-1.0..1.0)]);
            labels.push(y);
        }
        let beta = rng.random_range(0.1..=1.0);
        let out = adasyn(&rows, &labels, 0, beta, 5, &mut rng).map_err(|e| e.to_string())?;
        let g = ((n_maj - n_min) as f64) * beta;
        ensure!((out.target_total - g).abs() < 1e-9, "ADASYN G {}", out.target_total);
        let mass: usize = out.allocation.iter().sum();
        ensure!((mass as f64 - g).abs() <= n_min as f64, "ADASYN trial {trial}: sum g_i {mass} vs G {g}");
        ensure!(out.synthetic.len() == mass, "ADASYN emitted {} != {mass}", out.synthetic.len());
    }

    // chi-squared hand values
    let even = chi_squared_imbalance(&[50, 50]).map_err(|e| e.to_string())?;
    ensure!(even.statistic == 0.0, "chi2 [50,50] = {}", even.statistic);
    let skew = chi_squared_imbalance(&[90, 10]).map_err(|e| e.to_string())?;
    ensure!((skew.statistic - 64.0).abs() < 1e-12, "chi2 [90,10] = {}", skew.statistic);

    // split determinism and disjointness
    for n in [2usize, 10, 101, 1000] {
        let a = train_test_split(n, 0.8, 42).map_err(|e| e.to_string())?;
        let b = train_test_split(n, 0.8, 42).map_err(|e| e.to_string())?;
        ensure!(a == b, "split not deterministic for n={n}");
        let mut all: Vec<usize> = a.train.iter().chain(&a.test).copied().collect();
        all.sort();
        ensure!(all == (0..n).collect::<Vec<_>>(), "split is not a partition for n={n}");
    }

    // one-hot width equal across nodes; balancing only touches training rows
    let cohort = default_cohort();
    let nodes = cohort.data_nodes().map_err(|e| e.to_string())?;
    for pattern in Pattern::PREDICTIONS {
        let req = CacheRequest {
            pattern,
            schema: cohort.schema.clone(),
            settings: CacheSettings::default(),
        };
        let plain = CacheRequest {
            settings: CacheSettings {
                balance: BalanceConfig {
                    method: BalanceMethod::None,
                    ..BalanceConfig::default()
                },
                ..CacheSettings::default()
            },
            ..req.clone()
        };
        let mut widths = Vec::new();
        for node in &nodes {
            let summary = node.build_cache(&req).map_err(|e| e.to_string())?;
            widths.push(summary.feature_width);
            let balanced = node.cache(pattern).ok_or("cache missing")?;
            node.build_cache(&plain).map_err(|e| e.to_string())?;
            let unbalanced = node.cache(pattern).ok_or("cache missing")?;
            ensure!(balanced.test_x == unbalanced.test_x, "{pattern}: test rows changed by balancing");
            ensure!(balanced.test_y == unbalanced.test_y, "{pattern}: test labels changed by balancing");
            let real = balanced.n_train_real();
            ensure!(
                balanced.train_x[..real] == unbalanced.train_x[..],
                "{pattern}: real training rows changed by balancing"
            );
            ensure!(
                balanced.train_x.len() == real + balanced.n_synthetic,
                "{pattern}: synthetic rows are not confined to the training tail"
            );
        }
        ensure!(widths.windows(2).all(|w| w[0] == w[1]), "{pattern}: widths differ {widths:?}");
    }
    Ok("SMOTE, ADASYN, chi-squared, split, width and isolation checks".into())
}

// ---- metrics ----

fn brute_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &pi) in positive.iter().enumerate() {
        for (j, &pj) in positive.iter().enumerate() {
            if pi && !pj {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

pub fn check_metrics(draws: usize, seed: u64) -> Check {
    let mut rng = rng_from_seed(seed);
    for d in 0..draws {
        let k = rng.random_range(2..5);
        let n = rng.random_range(2..=200);
        let y_true: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        // coarse scores so ties occur
        let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.random_range(0..10) as f64 / 10.0).collect()).collect();
        let y_pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let r = compute_metrics(&y_true, &y_pred, &scores, k).map_err(|e| e.to_string())?;

        let mut confusion = vec![vec![0u64; k]; k];
        for (&t, &p) in y_true.iter().zip(&y_pred) {
            confusion[t][p] += 1;
        }
        ensure!(r.confusion == confusion, "draw {d}: confusion differs");
        let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
        ensure!(r.accuracy == correct as f64 / n as f64, "draw {d}: accuracy");
        let per: Vec<(f64, f64)> = (0..k)
            .map(|c| {
                let tp = confusion[c][c] as f64;
                let pred: u64 = (0..k).map(|t| confusion[t][c]).sum();
                let act: u64 = confusion[c].iter().sum();
                let p = if pred == 0 { 0.0 } else { tp / pred as f64 };
                let rc = if act == 0 { 0.0 } else { tp / act as f64 };
                (p, rc)
            })
            .collect();
        let (p, rc) = if k == 2 {
            per[1]
        } else {
            (
                per.iter().map(|x| x.0).sum::<f64>() / k as f64,
                per.iter().map(|x| x.1).sum::<f64>() / k as f64,
            )
        };
        let f1 = if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 };
        ensure!(r.precision == p, "draw {d}: precision {} vs {p}", r.precision);
        ensure!(r.recall == rc, "draw {d}: recall {} vs {rc}", r.recall);
        ensure!(r.f1 == f1, "draw {d}: f1 {} vs {f1}", r.f1);

        if k == 2 {
            let pos: Vec<bool> = y_true.iter().map(|&y| y == 1).collect();
            let s: Vec<f64> = scores.iter().map(|s| s[1]).collect();
            if let Some(auc) = binary_auc(&s, &pos) {
                let want = brute_auc(&s, &pos);
                ensure!((auc - want).abs() <= 1e-12, "draw {d}: auc {auc} vs {want}");
                ensure!((r.auc_roc - want).abs() <= 1e-12, "draw {d}: report auc {} vs {want}", r.auc_roc);
            }
        }
    }
    Ok(format!("{draws} random reports"))
}

// ---- privacy ----

pub const SENTINEL: &str = "ZQXSENTINEL";

/// A node whose unmapped free-text column and local sex codes carry the
/// sentinel marker.
pub fn sentinel_node() -> DataNode {
    let mut spec = default_cohort_spec();
    spec.nodes.truncate(1);
    spec.nodes[0].rows = 400;
    spec.nodes[0].recode.insert(
        "sex".into(),
        [
            ("female".to_string(), format!("{SENTINEL}_F")),
            ("male".to_string(), format!("{SENTINEL}_M")),
        ]
        .into_iter()
        .collect(),
    );
    let cohort = generate(&spec).unwrap();
    let gen = &cohort.nodes[0];
    let mut descriptor = gen.descriptor.clone();
    descriptor
        .local_columns
        .push(ColumnDef::new("free_text", AttributeKind::Categorical));
    let mut csv = String::new();
    for (i, line) in gen.csv.lines().enumerate() {
        csv.push_str(line);
        if i == 0 {
            csv.push_str(",free_text\n");
        } else {
            csv.push_str(&format!(",{SENTINEL}-{i}\n"));
        }
    }
    let (ds, _) = fedlake_core::datanode::ingest_reader(csv.as_bytes(), &descriptor.table, &descriptor.local_columns).unwrap();
    DataNode::with_dataset(descriptor, ds)
}

pub fn check_privacy() -> Check {
    let node = sentinel_node();
    let schema = default_cohort().schema.clone();
    let mut payloads: Vec<(String, String)> = Vec::new();
    let mut push = |what: &str, json: Result<String, serde_json::Error>| {
        payloads.push((what.to_string(), json.unwrap_or_default()));
    };
    push("metadata", serde_json::to_string(&node.metadata().map_err(|e| e.to_string())?));
    for pattern in Pattern::PREDICTIONS {
        let req = CacheRequest {
            pattern,
            schema: schema.clone(),
            settings: CacheSettings::default(),
        };
        let summary = node.build_cache(&req).map_err(|e| e.to_string())?;
        push("cache summary", serde_json::to_string(&summary));
        let config = TrainConfig::default();
        let params = ParameterVector::zeros(config.model, summary.num_classes, summary.feature_width);
        let mut values = params.values.clone();
        for round in 1..=3 {
            let resp = node
                .train_round(&RoundRequest {
                    pattern,
                    round,
                    params: values.clone(),
                    config: config.clone(),
                })
                .map_err(|e| e.to_string())?;
            push("train round", serde_json::to_string(&resp));
            values = resp.params;
        }
        let report = node
            .evaluate(&EvaluateRequest {
                pattern,
                model: EvalModel::Linear {
                    kind: config.model,
                    params: values,
                },
            })
            .map_err(|e| e.to_string())?;
        push("metrics", serde_json::to_string(&report));
        let tree = node
            .train_tree(&TreeRequest {
                pattern,
                config: TrainConfig {
                    model: ModelKind::DecisionTree,
                    ..TrainConfig::default()
                },
            })
            .map_err(|e| e.to_string())?;
        push("tree", serde_json::to_string(&tree));
        push("model log", serde_json::to_string(&node.model_log(pattern)));
    }
    for (what, json) in &payloads {
        ensure!(!json.is_empty(), "{what}: did not serialize");
        ensure!(!json.contains(SENTINEL), "{what}: leaked a sentinel cell value");
    }
    Ok(format!("{} payloads scanned", payloads.len()))
}
