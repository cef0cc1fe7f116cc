//! Acceptance checks, one line per criterion. Runs every criterion even
//! after a failure and exits non-zero if any of them failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fairaudit::causal::fit_cff;
use fairaudit::compare::{constrained_best, credit_benchmark_entries, tradeoff_score, FairnessMetric, PerformanceMetric, SelectorConfig, SelectorMode};
use fairaudit::dataset::{pearson, DataTable};
use fairaudit::learners::mlp::{self, Network};
use fairaudit::learners::{self, logistic, LearnerConfig, LearnerKind};
use fairaudit::metrics::{self, as_decisions, performance_from_decisions};
use fairaudit::mitigation::adversarial::{adversarial_fit, AdversarialConfig};
use fairaudit::mitigation::post::{self, CostWeights};
use fairaudit::mitigation::pre;
use fairaudit::mitigation::reductions::{reductions_eg, reductions_grid, ExponentiatedGradientConfig, GridSearchConfig};
use fairaudit::pipeline::{run_pipeline, Experiment, PipelineConfig, SplitConfig, Splits};
use fairaudit::synthgen::{self, GenConfig, AMOUNT_PER_INCOME};
use fairaudit_validation as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Generator defaults: n = 20,000, seed 0.
fn fixture() -> &'static (DataTable, Splits) {
    static F: OnceLock<(DataTable, Splits)> = OnceLock::new();
    F.get_or_init(|| {
        let (table, graph) = synthgen::generate(&GenConfig::default()).expect("fixture generates");
        let splits = Splits::new(&table, Some(graph), &SplitConfig::default()).expect("fixture splits");
        (table, splits)
    })
}

fn full_suite_run() -> &'static Experiment {
    static E: OnceLock<Experiment> = OnceLock::new();
    E.get_or_init(|| run_pipeline(&PipelineConfig::full_suite()).expect("full suite runs"))
}

fn mlp_config() -> LearnerConfig {
    LearnerConfig::default_for(LearnerKind::Mlp)
}

fn criterion_1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = Vec::new();
    for case in 0..1000 {
        let n = rng.random_range(1..=50);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.5) as u8).collect();
        let groups: Vec<u8> = (0..n).map(|_| rng.random_bool(0.6) as u8).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_bool(0.45) as u8).collect();
        let strata: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let preds = as_decisions(&labels);
        let c = oracle::counts(&labels, &groups, &y);

        let mut check = |name: &str, ok: bool| {
            if !ok {
                mismatches.push(format!("case {case}: {name}"));
            }
        };
        check("dp", metrics::demographic_parity(&preds, &groups).ok() == oracle::dp(&c));
        check("di", metrics::disparate_impact(&preds, &groups).ok().map(|d| d.ratio) == oracle::di(&c));
        check("eopp", metrics::equal_opportunity(&preds, &groups, &y).ok() == oracle::eopp(&c));
        check(
            "eo",
            metrics::equalized_odds(&preds, &groups, &y).ok().map(|e| (e.tpr_diff, e.fpr_diff, e.scalar)) == oracle::eo(&c),
        );
        check("pp", metrics::predictive_parity(&preds, &groups, &y).ok() == oracle::pp(&c));
        let (per, agg) = oracle::cdp(&labels, &groups, &strata);
        match metrics::conditional_dp(&preds, &groups, &strata) {
            Ok(got) => {
                let strata_match = got.strata.iter().map(|s| (s.stratum, s.size, s.dp)).eq(per.iter().copied());
                check("cdp", strata_match && agg == Some((got.weighted_mean_abs, got.max_abs)));
            }
            Err(_) => check("cdp", agg.is_none()),
        }
        let perf = performance_from_decisions(&preds, &y).ok().map(|p| (p.accuracy, p.precision, p.recall, p.f1));
        check("performance", perf == oracle::performance(&labels, &y));
    }

    for case in 0..1000 {
        let n = rng.random_range(1..=200);
        // coarse score grid so ties are common
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 19.0).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
        if metrics::auroc(&scores, &y).ok() != oracle::auroc_pairs(&scores, &y) {
            mismatches.push(format!("auroc case {case}"));
        }
    }
    ensure(
        mismatches.is_empty(),
        format!("1000 metric instances (n <= 50), 1000 auroc instances (n <= 200); mismatches: {:?}", mismatches),
    )
}

fn criterion_2() -> Check {
    let e = full_suite_run();
    let label = e.data_profile.as_ref().ok_or("no data profile")?.label_dp.abs();
    let mut parts = Vec::new();
    let mut ok = true;
    for id in ["Logistic", "RandomForest", "NeuralNetwork"] {
        let dp = e.result(id).and_then(|r| r.metrics.as_ref()).and_then(|m| m.dp).ok_or(format!("{id} has no dp"))?;
        ok &= dp.abs() >= label + 0.02;
        parts.push(format!("{id} {:.4}", dp.abs()));
    }
    ensure(ok, format!("label |dp| {label:.4}; prediction |dp|: {}", parts.join(", ")))
}

fn criterion_3() -> Check {
    let t = tradeoff_score(0.003, 0.872, 1.0).map_err(|e| e.to_string())?.score;
    let mut ok = (t - 0.9303).abs() <= 1e-4;
    for beta in [0.5, 1.0, 2.0] {
        ok &= tradeoff_score(0.0, 1.0, beta).map_err(|e| e.to_string())?.score == 1.0;
        for pi in [0.0, 0.3, 1.0] {
            for phi in [-1.0, 1.0] {
                ok &= tradeoff_score(phi, pi, beta).map_err(|e| e.to_string())?.score == 0.0;
            }
        }
    }
    ensure(ok, format!("score(0.003, 0.872, 1) = {t:.6}; boundary identities checked for beta in {{0.5, 1, 2}}"))
}

fn criterion_4() -> Check {
    let entries = credit_benchmark_entries();
    let sel = SelectorConfig {
        phi_metric: FairnessMetric::Dp,
        pi_metric: PerformanceMetric::F1,
        cap: Some(0.05),
        mode: SelectorMode::Constrained,
        beta: 1.0,
    };
    let s = constrained_best(&entries, &sel).map_err(|e| e.to_string())?;
    let winner = s.winner.clone().unwrap_or_default();
    let f1 = entries.iter().find(|e| e.strategy == winner).and_then(|e| e.metrics.f1);
    ensure(
        s.feasible.len() == 5 && winner == "AdvDP" && f1 == Some(0.869),
        format!("feasible {:?}; winner {winner} with F1 {f1:?}; expected 5 feasible, winner AdvDP with F1 0.869", s.feasible),
    )
}

fn criterion_5() -> Check {
    let (_, d) = fixture();
    let scorer = learners::fit(&mlp_config(), &d.fit, None).map_err(|e| e.to_string())?;
    let v = &d.validation;
    let s = scorer.predict_scores(v).map_err(|e| e.to_string())?;
    let (g, y, strata) = (v.protected().unwrap(), v.target().unwrap(), v.strata().ok_or("no strata")?);
    let costs = CostWeights::default();
    let decide = |p: &post::ThresholdPolicy| post::expected_decisions(p, &s, &g, Some(&strata)).map_err(|e| e.to_string());

    let dp_policy = post::fit_threshold_dp(&s, &g, &y, costs).map_err(|e| e.to_string())?;
    let dp = metrics::demographic_parity(&decide(&dp_policy)?, &g).map_err(|e| e.to_string())?;
    let eopp_policy = post::fit_threshold_eopp(&s, &g, &y, costs).map_err(|e| e.to_string())?;
    let eopp = metrics::equal_opportunity(&decide(&eopp_policy)?, &g, &y).map_err(|e| e.to_string())?;
    let eo_policy = post::fit_threshold_eo(&s, &g, &y, costs).map_err(|e| e.to_string())?;
    let eo = metrics::equalized_odds(&decide(&eo_policy)?, &g, &y).map_err(|e| e.to_string())?;
    let eo_max = eo.tpr_diff.abs().max(eo.fpr_diff.abs());
    let cdp_policy = post::fit_threshold_cdp(&s, &g, &strata, &y, costs).map_err(|e| e.to_string())?;
    let cdp = metrics::conditional_dp(&decide(&cdp_policy)?, &g, &strata).map_err(|e| e.to_string())?;
    let per: Vec<f64> = cdp.strata.iter().filter_map(|s| s.dp).map(f64::abs).collect();

    let ok = dp.abs() <= 0.02
        && eopp.abs() <= 0.02
        && eo_max <= 0.05
        && cdp.strata.len() == 3
        && per.len() == 3
        && per.iter().all(|&x| x <= 0.03);
    ensure(
        ok,
        format!(
            "validation rows {}: ThreshDP |dp| {:.4}, ThreshEOpp |eopp| {:.4}, ThreshEO max {:.4}, ThreshCDP per stratum {:?}",
            v.n_rows(),
            dp.abs(),
            eopp.abs(),
            eo_max,
            per.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn label_dp(t: &DataTable) -> f64 {
    metrics::demographic_parity(&as_decisions(&t.target().unwrap()), &t.protected().unwrap()).unwrap()
}

fn flip_protected(t: &DataTable) -> DataTable {
    let j = t.column_index(t.protected_name().unwrap()).unwrap();
    let rows: Vec<Vec<f64>> = t
        .rows()
        .map(|r| {
            let mut r = r.to_vec();
            r[j] = 1.0 - r[j];
            r
        })
        .collect();
    DataTable::from_encoded(t.schema().to_vec(), &rows).unwrap()
}

fn criterion_6() -> Check {
    let (_, d) = fixture();
    let train = &d.fit;
    let err = |e: &dyn std::fmt::Display| e.to_string();

    let (massaged, plan) = pre::massage(train, &LearnerConfig::default_for(LearnerKind::Forest)).map_err(|e| err(&e))?;
    let n = massaged.n_rows() as f64;
    let massaged_dp = label_dp(&massaged).abs();

    let (sampled, _) = pre::resample(train, 0).map_err(|e| err(&e))?;
    let sampled_dp = label_dp(&sampled).abs();
    let m = sampled.n_rows() as f64;

    let (suppressed, splan) = pre::suppress(train, pre::SUPPRESSION_THRESHOLD).map_err(|e| err(&e))?;
    let protected: Vec<f64> = train.protected().unwrap().iter().map(|&g| g as f64).collect();
    let mut worst = ("", 0.0f64);
    let names = suppressed.input_names();
    for name in &names {
        let x = suppressed.column_values(suppressed.column_index(name).unwrap());
        let r = pearson(&x, &protected).unwrap_or(0.0).abs();
        if r > worst.1 {
            worst = (name, r);
        }
    }

    let (ftu_table, _) = pre::ftu(train).map_err(|e| err(&e))?;
    let model = learners::fit(&mlp_config(), &ftu_table, None).map_err(|e| err(&e))?;
    let a = model.predict_scores(&d.test).map_err(|e| err(&e))?;
    let b = model.predict_scores(&flip_protected(&d.test)).map_err(|e| err(&e))?;
    let twins_equal = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());

    let removed: Vec<&str> = splan.removed_columns.iter().map(|c| c.name.as_str()).collect();
    ensure(
        massaged_dp <= 1.0 / n && sampled_dp <= 2.0 / m && worst.1 <= 0.15 && twins_equal,
        format!(
            "massaging |dp| {massaged_dp:.2e} (1/n {:.2e}, {} relabels); resampling |dp| {sampled_dp:.2e} (2/n {:.2e}); \
             suppression removed {removed:?}, max remaining |corr| {:.4} ({}); FTU twins bitwise equal on {} rows: {twins_equal}",
            1.0 / n,
            plan.relabeled_rows.len(),
            2.0 / m,
            worst.1,
            worst.0,
            a.len()
        ),
    )
}

fn criterion_7() -> Check {
    let (_, d) = fixture();
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let y = d.test.target().unwrap();
    let g = d.test.protected().unwrap();

    let base = learners::fit(&LearnerConfig::default_for(LearnerKind::Logistic), &d.fit, None).map_err(|e| err(&e))?;
    let base_labels = base.predict_labels(&d.test, 0.5).map_err(|e| err(&e))?;
    let base_acc = performance_from_decisions(&as_decisions(&base_labels), &y).map_err(|e| err(&e))?.accuracy;

    let mut parts = Vec::new();
    let mut ok = true;
    for (eps, cap, check_acc) in [(0.01, 0.03, true), (0.001, 0.02, false)] {
        let cfg = ExponentiatedGradientConfig { eps, ..Default::default() };
        let (model, _) = reductions_eg(&d.fit, &cfg).map_err(|e| err(&e))?;
        let dec = model.expected_decisions(&d.test).map_err(|e| err(&e))?;
        let dp = metrics::demographic_parity(&dec, &g).map_err(|e| err(&e))?;
        let acc = performance_from_decisions(&dec, &y).map_err(|e| err(&e))?.accuracy;
        ok &= dp.abs() <= cap;
        if check_acc {
            ok &= (base_acc - acc).abs() <= 0.03;
        }
        parts.push(format!("eps {eps}: |dp| {:.4}, accuracy {acc:.4}", dp.abs()));
    }

    let (_, report) = reductions_grid(&d.fit, &d.validation, &GridSearchConfig::default()).map_err(|e| err(&e))?;
    ok &= report.models_trained == 50;
    ensure(
        ok,
        format!("base accuracy {base_acc:.4}; {}; grid search trained {} models", parts.join("; "), report.models_trained),
    )
}

fn criterion_8() -> Check {
    let e = full_suite_run();
    let dp = |id: &str| e.result(id).and_then(|r| r.metrics.as_ref()).and_then(|m| m.dp).ok_or(format!("{id} has no dp"));
    let (adv, mlp) = (dp("AdvDP")?.abs(), dp("NeuralNetwork")?.abs());
    let reduction = 1.0 - adv / mlp;

    let (_, d) = fixture();
    let cfg = AdversarialConfig { alpha: 0.0, ..Default::default() };
    let plain = adversarial_fit(&d.fit, &cfg).map_err(|e| e.to_string())?;
    let mlp_model = learners::fit(&LearnerConfig::Mlp(cfg.predictor.clone()), &d.fit, None).map_err(|e| e.to_string())?;
    let a = plain.predict_scores(&d.test).map_err(|e| e.to_string())?;
    let b = mlp_model.predict_scores(&d.test).map_err(|e| e.to_string())?;
    let same = plain.model == mlp_model.model && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(
        reduction >= 0.5 && same,
        format!("|dp| NeuralNetwork {mlp:.4} -> AdvDP {adv:.4} ({:.1}% reduction); alpha 0 identical to the plain network: {same}", 100.0 * reduction),
    )
}

fn criterion_9() -> Check {
    let (_, d) = fixture();
    let graph = d.graph.as_ref().ok_or("fixture has no graph")?;
    let err = |e: &dyn std::fmt::Display| e.to_string();

    let cff = fit_cff(&d.fit, graph, &mlp_config()).map_err(|e| err(&e))?;
    let sem = &cff.sem;
    let mut rebuilt = true;
    for i in 0..d.fit.n_rows() {
        let row = sem.training_row(&d.fit, i).map_err(|e| err(&e))?;
        rebuilt &= sem.reconstruct(&row).iter().zip(d.fit.row(i)).all(|(a, b)| a.to_bits() == b.to_bits());
    }

    let rows = sem.abduct(&d.test.select_rows(&(0..1000).collect::<Vec<_>>())).map_err(|e| err(&e))?;
    let flipped: Vec<_> = rows.iter().map(|r| sem.flip(r)).collect();
    let (a, b) = (cff.score_rows(&rows), cff.score_rows(&flipped));
    let invariant = a.len() == 1000 && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    let round_trip = rows
        .iter()
        .zip(&flipped)
        .flat_map(|(r, f)| sem.flip(f).values.iter().zip(&r.values).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
        .fold(0.0f64, f64::max);

    let (big, truth) = synthgen::generate(&GenConfig { n: 50_000, ..Default::default() }).map_err(|e| err(&e))?;
    let big_sem = fairaudit::causal::fit_sem(&big, &truth).map_err(|e| err(&e))?;
    let gen = GenConfig::default();
    let mut z_scores = Vec::new();
    // (node, parent or None for the intercept, true value)
    for (node, parent, truth) in [
        ("income", None, 30.0),
        ("income", Some("citizenship"), gen.proxy_strength),
        ("amount", None, 5.0),
        ("amount", Some("income"), AMOUNT_PER_INCOME),
    ] {
        let m = &big_sem.nodes[node];
        let k = match parent {
            None => 0,
            Some(p) => 1 + m.parents.iter().position(|x| x == p).ok_or(format!("{p} is not a parent of {node}"))?,
        };
        let est = if k == 0 { m.intercept } else { m.coefficients[k - 1] };
        z_scores.push((format!("{node}<-{}", parent.unwrap_or("1")), (est - truth) / m.std_errors[k]));
    }
    let recovered = z_scores.iter().all(|(_, z)| z.abs() <= 3.0);
    ensure(
        rebuilt && invariant && round_trip <= 1e-12 && recovered,
        format!(
            "reconstruction exact on {} rows: {rebuilt}; CFF invariant on 1000 rows: {invariant}; double flip max gap {round_trip:.1e}; \
             coefficient z-scores {}",
            d.fit.n_rows(),
            z_scores.iter().map(|(n, z)| format!("{n} {z:+.2}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn criterion_10() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut worst_lr, mut worst_mlp) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let d = rng.random_range(1..=5);
        let n = rng.random_range(2..=20);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_bool(0.5) as u8 as f64).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let l2 = rng.random_range(0.0..0.1);

        let p: Vec<f64> = (0..=d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let (_, g) = logistic::loss_and_gradient(&p, &x, d, &y, &w, l2);
        let fd = oracle::finite_difference(|q| logistic::loss_and_gradient(q, &x, d, &y, &w, l2).0, &p, 1e-5);
        worst_lr = worst_lr.max(oracle::relative_error(&g, &fd));

        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..=4)).collect();
        let net = Network::new(d, &hidden);
        let p: Vec<f64> = (0..net.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = mlp::loss_and_gradient(&net, &p, &x, &y, &w, l2);
        let fd = oracle::finite_difference(|q| mlp::loss_and_gradient(&net, q, &x, &y, &w, l2).0, &p, 1e-5);
        worst_mlp = worst_mlp.max(oracle::relative_error(&g, &fd));
    }
    ensure(
        worst_lr < 1e-4 && worst_mlp < 1e-4,
        format!("100 instances each; worst relative error logistic {worst_lr:.2e}, mlp {worst_mlp:.2e}"),
    )
}

fn criterion_11() -> Check {
    let first = full_suite_run();
    let second = run_pipeline(&PipelineConfig::full_suite()).map_err(|e| e.to_string())?;
    let (a, b) = (first.canonical_json(), second.canonical_json());
    ensure(a == b, format!("{} strategies, report {} bytes, identical: {}", first.results.len(), a.len(), a == b))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, Option<u64>, fn() -> Check); 11] = [
        (1, "metric oracles", Some(30), criterion_1),
        (2, "bias amplification", Some(120), criterion_2),
        (3, "trade-off formula", None, criterion_3),
        (4, "constrained selection", None, criterion_4),
        (5, "post-processing guarantees", Some(120), criterion_5),
        (6, "pre-processing constructions", Some(120), criterion_6),
        (7, "reductions", None, criterion_7),
        (8, "adversarial debiasing", None, criterion_8),
        (9, "causal suite", None, criterion_9),
        (10, "gradient numerics", None, criterion_10),
        (11, "end-to-end determinism", None, criterion_11),
    ];
    let mut failed = Vec::new();
    for (n, name, budget, f) in criteria {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed();
        let over = budget.is_some_and(|b| took > Duration::from_secs(b));
        let (ok, detail) = match res {
            Ok(d) if !over => (true, d),
            Ok(d) => (false, format!("{d}; over the {}s budget", budget.unwrap_or_default())),
            Err(d) => (false, d),
        };
        println!("criterion {n:>2} {} {name} ({:.1}s): {detail}", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
        if !ok {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("all 11 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
