use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use glmm_mispredict::fit::{fit_ml, marginal_loglik};
use glmm_mispredict::lmm::{bp_mixture_lmm, LmmClusterMats};
use glmm_mispredict::quadrature::{gh_rule, posterior_summary};
use glmm_mispredict::rng::stream;
use glmm_mispredict::{FamilyKind, FitConfig};
use glmm_mispredict_bench::scenario_data;
use std::hint::black_box;

fn bench_gh_rule(c: &mut Criterion) {
    let mut g = c.benchmark_group("gh_rule");
    for order in [25, 60, 200] {
        g.bench_with_input(BenchmarkId::from_parameter(order), &order, |b, &n| b.iter(|| gh_rule(black_box(n))));
    }
    g.finish();
}

fn bench_posterior(c: &mut Criterion) {
    let rule = gh_rule(25).unwrap();
    let (bern, theta_b) = scenario_data("table1:bernoulli:distI:m100:n20");
    let (lmm, theta_g) = scenario_data("tableS1:lmm:distII:m100:n5");
    c.bench_function("posterior_summary/bernoulli_n20_c2", |b| {
        b.iter(|| posterior_summary(black_box(&bern.clusters[0]), &theta_b, &rule).unwrap())
    });
    c.bench_function("bp_mixture_lmm/n5_c2", |b| {
        b.iter(|| {
            let mats = LmmClusterMats::from_theta(black_box(&lmm.clusters[0]), &theta_g).unwrap();
            bp_mixture_lmm(&mats, &theta_g.re_mixture).unwrap()
        })
    });
}

fn bench_loglik(c: &mut Criterion) {
    let cfg = FitConfig::with_components(2);
    for name in ["table1:bernoulli:distI:m100:n20", "table2:poisson:distI:m50:n5", "tableS1:lmm:distI:m100:n5"] {
        let (ds, theta) = scenario_data(name);
        c.bench_function(&format!("marginal_loglik/{name}"), |b| {
            b.iter(|| marginal_loglik(black_box(&ds), &theta, &cfg).unwrap())
        });
    }
}

fn bench_fit(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit_ml");
    g.sample_size(10);
    for (name, kind) in [("table2:poisson:distI:m50:n5", FamilyKind::Poisson), ("tableS1:lmm:distI:m100:n5", FamilyKind::Gaussian)] {
        let (ds, _) = scenario_data(name);
        for comps in [1, 2] {
            let cfg = FitConfig { n_starts: 1, ..FitConfig::with_components(comps) };
            g.bench_function(format!("{name}/c{comps}"), |b| {
                b.iter(|| fit_ml(&ds, kind, &cfg, &mut stream(1, "fit", 0)).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, bench_gh_rule, bench_posterior, bench_loglik, bench_fit);
criterion_main!(benches);
