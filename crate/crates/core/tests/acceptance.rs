//! Acceptance gate. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use formrelax_core::bn::{self, learn_structure_traced, BayesNet, DiscreteData, NodeSpec};
use formrelax_core::dataset::{load_instances, load_schema, temporal_split, Dataset};
use formrelax_core::eval::{generate_cases, run_experiment, ScenarioConfig};
use formrelax_core::pipeline::{theta_grid, train, train_with_split, ModelBundle, TrainConfig};
use formrelax_core::relax::{predict_requirement, predict_with_theta, PartialForm};
use formrelax_core::smote::{
    oversample, oversample_with, EncodedInstance, Feature, InterpolationSource, SmoteConfig,
};
use formrelax_core::synth::{self, PlantedConfig, PLACEHOLDERS};
use formrelax_core::{BinaryClass, MeaninglessDictionary, MetricsReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Gate {
    failed: usize,
}

impl Gate {
    fn run(&mut self, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let r = f();
        let took = t.elapsed();
        let r = match r {
            Ok(detail) if took > limit => {
                Err(format!("{detail}; took {took:.2?}, limit {limit:?}"))
            }
            other => other,
        };
        match r {
            Ok(detail) => println!("PASS  {name}: {detail} [{took:.2?}]"),
            Err(why) => {
                self.failed += 1;
                println!("FAIL  {name}: {why} [{took:.2?}]");
            }
        }
    }

    fn skip(&self, name: &str, why: &str) {
        println!("SKIP  {name}: {why}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn running_example_net() -> BayesNet<f64> {
    BayesNet::from_nodes(vec![
        NodeSpec {
            name: "Company type".into(),
            states: names(&["a", "not_a"]),
            parents: vec![],
            cpt: vec![vec![0.2, 0.8]],
        },
        NodeSpec {
            name: "Revenue".into(),
            states: names(&["b", "not_b"]),
            parents: names(&["Company type"]),
            cpt: vec![vec![0.4, 0.6], vec![0.1, 0.9]],
        },
        NodeSpec {
            name: "Tax ID".into(),
            states: names(&["c", "not_c"]),
            parents: names(&["Company type", "Revenue"]),
            cpt: vec![
                vec![0.9, 0.1],
                vec![0.4, 0.6],
                vec![0.4, 0.6],
                vec![0.1, 0.9],
            ],
        },
    ])
    .expect("fixture network")
}

fn worked_example() -> Outcome {
    let net = running_example_net();
    let ev = BTreeMap::from([("Company type".to_string(), "a".to_string())]);
    let p = net
        .infer(&ev, "Tax ID")
        .map_err(|e| e.to_string())?
        .prob("c")
        .unwrap();
    // P(c|a) = P(b|a) P(c|a,b) + P(not b|a) P(c|a,not b)
    let oracle = 0.4 * 0.9 + 0.6 * 0.4;
    ensure(
        (p - 0.6).abs() < 1e-12 && (p - oracle).abs() < 1e-12,
        || format!("P(c|a) = {p}"),
    )?;
    Ok(format!("P(c|a) = {p}"))
}

fn random_net(rng: &mut ChaCha8Rng) -> BayesNet<f64> {
    let n = rng.gen_range(1..=6);
    let cards: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=4)).collect();
    let nodes = (0..n)
        .map(|i| {
            let parents: Vec<usize> = (0..i).filter(|_| rng.gen_bool(0.4)).take(3).collect();
            let q: usize = parents.iter().map(|&p| cards[p]).product();
            let cpt = (0..q)
                .map(|_| {
                    let raw: Vec<f64> = (0..cards[i]).map(|_| rng.gen_range(0.01..1.0)).collect();
                    let z: f64 = raw.iter().sum();
                    raw.into_iter().map(|x| x / z).collect()
                })
                .collect();
            NodeSpec {
                name: format!("v{i}"),
                states: (0..cards[i]).map(|s| format!("s{s}")).collect(),
                parents: parents.iter().map(|p| format!("v{p}")).collect(),
                cpt,
            }
        })
        .collect();
    BayesNet::from_nodes(nodes).expect("random network")
}

/// Brute-force posterior from the CPT tables alone.
fn joint_oracle(net: &BayesNet<f64>, evidence: &[(usize, usize)], query: usize) -> Vec<f64> {
    let n = net.len();
    let cards: Vec<usize> = (0..n).map(|i| net.cardinality(i)).collect();
    let mut acc = vec![0.0; cards[query]];
    let mut a = vec![0usize; n];
    loop {
        if evidence.iter().all(|&(v, s)| a[v] == s) {
            let mut p = 1.0;
            for i in 0..n {
                let cfg = net
                    .dag()
                    .parents(i)
                    .iter()
                    .fold(0, |c, &pa| c * cards[pa] + a[pa]);
                p *= net.cpt(i).rows[cfg][a[i]];
            }
            acc[a[query]] += p;
        }
        let mut k = n;
        loop {
            if k == 0 {
                let z: f64 = acc.iter().sum();
                return acc.into_iter().map(|x| x / z).collect();
            }
            k -= 1;
            a[k] += 1;
            if a[k] < cards[k] {
                break;
            }
            a[k] = 0;
        }
    }
}

fn inference_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut queries = 0;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let net = random_net(&mut rng);
        let n = net.len();
        for query in 0..n {
            for round in 0..3 {
                let evidence: Vec<(usize, usize)> = if round == 0 {
                    vec![]
                } else {
                    let mut ev = Vec::new();
                    for v in (0..n).filter(|&v| v != query) {
                        if rng.gen_bool(0.5) {
                            ev.push((v, rng.gen_range(0..net.cardinality(v))));
                        }
                    }
                    ev
                };
                let ve = net
                    .infer_indexed(&evidence, query)
                    .map_err(|e| e.to_string())?;
                let oracle = joint_oracle(&net, &evidence, query);
                for (x, y) in ve.probs.iter().zip(&oracle) {
                    worst = worst.max((x - y).abs());
                }
                queries += 1;
            }
        }
    }
    ensure(worst < 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!(
        "{queries} queries over 100 networks, max deviation {worst:.1e}"
    ))
}

struct Fixed {
    seed: usize,
    neighbor: usize,
    gap: f64,
}

impl InterpolationSource for Fixed {
    fn seed_index(&mut self, _: usize) -> usize {
        self.seed
    }
    fn neighbor_index(&mut self, _: usize) -> usize {
        self.neighbor
    }
    fn gap(&mut self) -> f64 {
        self.gap
    }
}

fn ord(x: f64, c: BinaryClass) -> EncodedInstance<f64> {
    EncodedInstance::new(vec![Feature::Ordinal(x)], c)
}

fn smote_fidelity() -> Outcome {
    use BinaryClass::{Optional as O, Required as R};
    // revenues: three optional, four required
    let data = vec![
        ord(39.0, O),
        ord(42.0, O),
        ord(25.0, O),
        ord(100.0, R),
        ord(150.0, R),
        ord(140.0, R),
        ord(120.0, R),
    ];
    let cfg = SmoteConfig {
        k: 1,
        target_ratio: 1.0,
        seed: 0,
    };
    let out = oversample_with(
        &data,
        &cfg,
        &mut Fixed {
            seed: 1,
            neighbor: 0,
            gap: 0.7,
        },
    )
    .map_err(|e| e.to_string())?;
    let raw = 42.0 + (39.0 - 42.0) * 0.7;
    ensure((raw - 39.9f64).abs() < 1e-12, || {
        format!("interpolated {raw}")
    })?;
    let first = &out.synthetic()[0];
    ensure(first.features == vec![Feature::Ordinal(40.0)], || {
        format!("synthetic {first:?}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for d in 0..50 {
        let n_min = rng.gen_range(1..15);
        let n_maj = rng.gen_range(n_min + 1..60);
        let width = rng.gen_range(1..4);
        let mut rows = Vec::new();
        for (count, class) in [(n_min, O), (n_maj, R)] {
            for _ in 0..count {
                let f = (0..width)
                    .map(|_| Feature::Ordinal(rng.gen_range(0..12) as f64))
                    .collect();
                rows.push(EncodedInstance::new(f, class));
            }
        }
        let cfg = SmoteConfig {
            k: 5,
            target_ratio: 1.0,
            seed: d,
        };
        let out = oversample(&rows, &cfg).map_err(|e| e.to_string())?;
        let opt = out.instances.iter().filter(|i| i.class == O).count();
        let req = out.instances.len() - opt;
        ensure(opt == req, || format!("dataset {d}: {opt} vs {req}"))?;
        for (syn, &(s, nb)) in out.synthetic().iter().zip(&out.origins) {
            for (j, f) in syn.features.iter().enumerate() {
                let (Feature::Ordinal(x), Feature::Ordinal(a), Feature::Ordinal(b)) =
                    (f, &rows[s].features[j], &rows[nb].features[j])
                else {
                    return Err("non-ordinal feature".into());
                };
                ensure(*x >= a.min(*b) && *x <= a.max(*b), || {
                    format!("dataset {d}: {x} outside [{a}, {b}]")
                })?;
            }
        }
    }
    Ok("39.9 rounds to 40; 50 random datasets balanced and convex".into())
}

fn structure_sanity() -> Outcome {
    let mut max_score_drop = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let rows: Vec<Vec<String>> = (0..1000)
            .map(|_| {
                let x = rng.gen_range(0..3);
                let y = (x + 1) % 3;
                let z = rng.gen_range(0..3);
                vec![x.to_string(), y.to_string(), z.to_string()]
            })
            .collect();
        let data =
            DiscreteData::from_rows(names(&["X", "Y", "Z"]), &rows).map_err(|e| e.to_string())?;
        let cfg = bn::StructureSearchConfig {
            seed,
            ..Default::default()
        };
        let res = learn_structure_traced::<f64>(&data, &cfg).map_err(|e| e.to_string())?;
        let dag = &res.dag;
        ensure(dag.has_edge(0, 1) || dag.has_edge(1, 0), || {
            format!("seed {seed}: X and Y not linked")
        })?;
        ensure(
            dag.parents(2).is_empty() && dag.children(2).is_empty(),
            || format!("seed {seed}: Z connected"),
        )?;
        for trace in &res.traces {
            for w in trace.windows(2) {
                max_score_drop = max_score_drop.max(w[0] - w[1]);
            }
        }
    }
    ensure(max_score_drop <= 0.0, || {
        format!("score decreased by {max_score_drop}")
    })?;
    Ok("X-Y linked and Z isolated for 5/5 seeds; scores non-decreasing".into())
}

/// Optional iff blank or a known placeholder.
fn truth_of(value: Option<&str>) -> BinaryClass {
    match value.map(|v| v.trim().to_lowercase()) {
        Some(v) if !v.is_empty() && !PLACEHOLDERS.contains(&v.as_str()) => BinaryClass::Required,
        _ => BinaryClass::Optional,
    }
}

struct Planted {
    data: Dataset,
    full: ModelBundle,
    test: Dataset,
}

fn planted() -> Planted {
    let data = synth::planted_dataset(&PlantedConfig {
        rows: 10_000,
        noise: 0.05,
        other_missing: 0.0,
        seed: 11,
    });
    let (full, test) = train_with_split(
        &data,
        &synth::placeholder_dictionary(),
        &TrainConfig::default(),
    )
    .expect("training");
    Planted { data, full, test }
}

fn fmt_metrics(r: &MetricsReport) -> String {
    let o = &r.overall;
    let f = |x: Option<f64>| x.map_or("-".into(), |v| format!("{v:.3}"));
    format!(
        "Prec {} Rec {} NPV {} Spec {} over {} cases",
        f(o.precision),
        f(o.recall),
        f(o.npv),
        f(o.specificity),
        r.cases
    )
}

fn planted_end_to_end(p: &Planted, elapsed_training: Duration) -> Outcome {
    let r = run_experiment(&p.full, &p.test, &ScenarioConfig::sequential())
        .map_err(|e| e.to_string())?;
    let o = &r.overall;
    let get = |x: Option<f64>| x.unwrap_or(f64::NAN);
    let ok = get(o.npv) >= 0.90
        && get(o.specificity) >= 0.80
        && get(o.recall) >= 0.95
        && get(o.precision) >= 0.95;
    ensure(ok, || fmt_metrics(&r))?;
    Ok(format!(
        "{} (training {elapsed_training:.2?})",
        fmt_metrics(&r)
    ))
}

fn threshold_optimality(p: &Planted) -> Outcome {
    let (_, tune, _) = temporal_split(&p.data, Default::default()).map_err(|e| e.to_string())?;
    let grid: Vec<f64> = (0..=20)
        .map(|k| (k as f64 * 0.05 * 100.0).round() / 100.0)
        .collect();
    ensure(grid == theta_grid().to_vec(), || "grid differs".into())?;
    let mut lines = Vec::new();
    for (target, model) in &p.full.models {
        let mut best = (0usize, f64::NAN);
        for &theta in &grid {
            let mut correct = 0;
            for inst in &tune.instances {
                let form = PartialForm::new(
                    inst.values
                        .iter()
                        .filter(|(k, _)| *k != target)
                        .map(|(k, v)| (k.clone(), v.clone())),
                );
                let d = predict_with_theta(&p.full, &form, target, Some(theta))
                    .map_err(|e| e.to_string())?;
                let decided = if d.final_required {
                    BinaryClass::Required
                } else {
                    BinaryClass::Optional
                };
                correct += (decided == truth_of(inst.get(target))) as usize;
            }
            if best.1.is_nan() || correct > best.0 {
                best = (correct, theta);
            }
        }
        ensure(best.1 == model.theta, || {
            format!("{target}: tuned {} but sweep picks {}", model.theta, best.1)
        })?;
        lines.push(format!(
            "{target} theta {} ({}/{})",
            model.theta,
            best.0,
            tune.len()
        ));
    }
    ensure(!lines.is_empty(), || "no models".into())?;
    Ok(lines.join(", "))
}

fn endorser_monotonicity(p: &Planted) -> Outcome {
    let targets: Vec<String> = p.full.models.keys().cloned().collect();
    let cases = generate_cases(
        &p.test,
        &targets,
        &p.full.preprocessor.meaningless,
        &ScenarioConfig::sequential(),
    );
    let mut counts = Vec::new();
    for theta in theta_grid() {
        let mut relaxed = 0usize;
        for c in &cases {
            let form = PartialForm {
                filled: c.prefix.clone(),
                timestamp: None,
            };
            let d = predict_with_theta(&p.full, &form, &c.target, Some(theta))
                .map_err(|e| e.to_string())?;
            relaxed += (!d.final_required) as usize;
        }
        counts.push(relaxed);
    }
    ensure(counts.windows(2).all(|w| w[1] <= w[0]), || {
        format!("counts {counts:?}")
    })?;
    Ok(format!(
        "relaxed counts from {} down to {}",
        counts[0], counts[20]
    ))
}

fn variant_ordering(p: &Planted) -> Outcome {
    let dict = synth::placeholder_dictionary();
    let (tr, tu, te) = temporal_split(&p.data, Default::default()).map_err(|e| e.to_string())?;
    let run = |cfg: TrainConfig| -> Result<MetricsReport, String> {
        let b = train(&tr, &tu, &dict, &cfg).map_err(|e| e.to_string())?;
        run_experiment(&b, &te, &ScenarioConfig::sequential()).map_err(|e| e.to_string())
    };
    let full =
        run_experiment(&p.full, &te, &ScenarioConfig::sequential()).map_err(|e| e.to_string())?;
    let no_smote = run(TrainConfig {
        enable_smote: false,
        ..Default::default()
    })?;
    let no_endorser = run(TrainConfig {
        enable_endorser: false,
        ..Default::default()
    })?;
    let spec = |r: &MetricsReport| r.overall.specificity.unwrap_or(f64::NAN);
    let rec = |r: &MetricsReport| r.overall.recall.unwrap_or(f64::NAN);
    ensure(spec(&full) >= spec(&no_smote), || {
        format!(
            "Spec {:.4} < {:.4} without oversampling",
            spec(&full),
            spec(&no_smote)
        )
    })?;
    ensure(rec(&full) >= rec(&no_endorser), || {
        format!(
            "Rec {:.4} < {:.4} without endorser",
            rec(&full),
            rec(&no_endorser)
        )
    })?;
    Ok(format!(
        "Spec {:.4} >= {:.4} (-S); Rec {:.4} >= {:.4} (-E)",
        spec(&full),
        spec(&no_smote),
        rec(&full),
        rec(&no_endorser)
    ))
}

fn latency() -> Outcome {
    let data = synth::wide_dataset(30, 3000, 5);
    let (bundle, test) = train_with_split(
        &data,
        &MeaninglessDictionary::default(),
        &TrainConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure(!bundle.models.is_empty(), || "no models".into())?;
    let mut worst = Duration::ZERO;
    let mut total = Duration::ZERO;
    let mut calls = 0u32;
    for inst in test.instances.iter().take(50) {
        for target in bundle.models.keys() {
            let form = PartialForm::new(
                inst.values
                    .iter()
                    .filter(|(k, _)| *k != target)
                    .map(|(k, v)| (k.clone(), v.clone())),
            );
            let t = Instant::now();
            predict_requirement(&bundle, &form, target).map_err(|e| e.to_string())?;
            let took = t.elapsed();
            worst = worst.max(took);
            total += took;
            calls += 1;
        }
    }
    ensure(worst < Duration::from_millis(1000), || {
        format!("slowest prediction {worst:?}")
    })?;
    Ok(format!(
        "{} targets, {calls} calls, mean {:.2?}, max {worst:.2?}",
        bundle.models.len(),
        total / calls
    ))
}

/// Runs on a local copy of the public biosample export when
/// `FORMRELAX_NCBI_DIR` points at a directory holding `schema.json`,
/// `data.csv` and optionally `dictionary.txt`.
fn ncbi(gate: &mut Gate) {
    let name = "public dataset replication (optional)";
    let Ok(dir) = std::env::var("FORMRELAX_NCBI_DIR") else {
        gate.skip(name, "FORMRELAX_NCBI_DIR not set");
        return;
    };
    gate.run(name, Duration::from_secs(24 * 3600), || {
        let dir = std::path::Path::new(&dir);
        let schema = load_schema(dir.join("schema.json")).map_err(|e| e.to_string())?;
        let data = load_instances(dir.join("data.csv"), &schema).map_err(|e| e.to_string())?;
        let dict_path = dir.join("dictionary.txt");
        let dict = if dict_path.exists() {
            MeaninglessDictionary::from_file(&dict_path).map_err(|e| e.to_string())?
        } else {
            MeaninglessDictionary::default()
        };
        let (bundle, test) =
            train_with_split(&data, &dict, &TrainConfig::default()).map_err(|e| e.to_string())?;
        let mut out = Vec::new();
        for sc in [
            ScenarioConfig::sequential(),
            ScenarioConfig::partial_random(0),
        ] {
            let r = run_experiment(&bundle, &test, &sc).map_err(|e| e.to_string())?;
            println!("{}", r.to_table());
            out.push(format!("{}: {}", sc.mode, fmt_metrics(&r)));
        }
        Ok(out.join("; "))
    });
}

fn main() {
    let mut gate = Gate { failed: 0 };
    gate.run(
        "worked-example inference",
        Duration::from_secs(1),
        worked_example,
    );
    gate.run(
        "inference oracle equivalence",
        Duration::from_secs(30),
        inference_equivalence,
    );
    gate.run(
        "oversampling fidelity and balance",
        Duration::from_secs(10),
        smote_fidelity,
    );
    gate.run(
        "structure search sanity",
        Duration::from_secs(20),
        structure_sanity,
    );

    let t = Instant::now();
    let p = planted();
    let training = t.elapsed();
    gate.run(
        "planted-rule end to end",
        Duration::from_secs(120).saturating_sub(training),
        || planted_end_to_end(&p, training),
    );
    gate.run(
        "threshold sweep optimality",
        Duration::from_secs(30),
        || threshold_optimality(&p),
    );
    gate.run("endorser monotonicity", Duration::from_secs(30), || {
        endorser_monotonicity(&p)
    });
    gate.run("variant ordering", Duration::from_secs(240), || {
        variant_ordering(&p)
    });
    gate.run(
        "prediction latency, 30 fields",
        Duration::from_secs(60),
        latency,
    );
    ncbi(&mut gate);

    if gate.failed > 0 {
        println!("{} criteria failed", gate.failed);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
