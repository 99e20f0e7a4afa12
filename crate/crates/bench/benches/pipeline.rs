use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::ArrayView1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uncx::concepts::{fit_nmf, transform_nnls, NmfConfig, Provenance};
use uncx::grouping::{fit_gmm_em, DEFAULT_MAX_ITER, DEFAULT_TOL};
use uncx::importance::{sobol_total_indices, MaskDesign, Sequence, UncertaintyResponse};
use uncx::pipeline::{run_pipeline, RunConfig};
use uncx::store::Dataset;
use uncx::synth::{generate, SynthSpec};
use uncx::uncertainty::{score_all, DropoutMaskSet};

fn dataset(n_items: usize) -> Dataset {
    generate(&SynthSpec {
        n_items,
        ..SynthSpec::default()
    })
    .unwrap()
    .0
}

fn scores(c: &mut Criterion) {
    let ds = dataset(1000);
    c.bench_function("uncertainty/score_all_1000", |b| b.iter(|| score_all(black_box(&ds.predictions))));
    let u: Vec<f64> = score_all(&ds.predictions).iter().map(|s| s.total).collect();
    c.bench_function("grouping/gmm_em_1000", |b| {
        b.iter(|| fit_gmm_em(black_box(&u), DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap())
    });
}

fn nmf(c: &mut Criterion) {
    let ds = dataset(500);
    let a = ds.segments.matrix().to_owned();
    let mut group = c.benchmark_group("nmf");
    group.sample_size(10);
    group.bench_function("fit_2000x32_d10", |b| {
        b.iter(|| fit_nmf(black_box(a.view()), 10, Provenance::Certain, &NmfConfig::default()).unwrap())
    });
    let fit = fit_nmf(a.view(), 10, Provenance::Certain, &NmfConfig::default()).unwrap();
    group.bench_function("nnls_transform_2000x32_d10", |b| {
        b.iter(|| transform_nnls(black_box(a.view()), &fit.bank).unwrap())
    });
    group.finish();
}

fn sobol(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let coef: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h = |x: ArrayView1<f64>| x.iter().zip(&coef).map(|(x, a)| a * x * x).sum::<f64>();
    let design = MaskDesign::new(128, 10, 1, Sequence::Sobol).unwrap();
    c.bench_function("sobol/jansen_n128_d10", |b| b.iter(|| sobol_total_indices(h, black_box(&design)).unwrap()));
    c.bench_function("sobol/design_n4096_d10", |b| {
        b.iter(|| MaskDesign::new(4096, 10, black_box(1), Sequence::Sobol).unwrap())
    });
}

fn importance(c: &mut Criterion) {
    let ds = dataset(300);
    let config = RunConfig::default();
    let run = run_pipeline(&ds, &config, 0).unwrap();
    let masks = DropoutMaskSet::generate(2, config.mask_samples, ds.head.channels(), ds.head.dropout_rate).unwrap();
    let response = UncertaintyResponse::new(&run.bank_unc, &ds.head, &masks, &run.gmm, config.measure, config.pooling).unwrap();
    let design = MaskDesign::new(config.n_qmc, run.d_unc(), 4, config.sequence).unwrap();
    let item = &ds.manifest.items[0];
    c.bench_function("importance/local_one_item", |b| {
        b.iter(|| response.local_importance(black_box(item), run.w_unc.view(), &design).unwrap())
    });

    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("run_300_items", |b| {
        b.iter_batched(|| ds.clone(), |ds| run_pipeline(&ds, &config, 0).unwrap(), BatchSize::LargeInput)
    });
    group.finish();
}

criterion_group!(benches, scores, nmf, sobol, importance);
criterion_main!(benches);
