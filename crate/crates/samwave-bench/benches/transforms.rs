use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use samwave_core::dtcwt::{dtcwt2_level1, dtcwt_filters_for, DtcwtName};
use samwave_core::freqfeat::{fourier_filter, whf_extract, FreqMaskConfig, MaskMode, WhfWavelet};
use samwave_core::rng::Prng;
use samwave_core::tensor::Tensor;
use samwave_core::wavelets::{dwt2, filter_bank_for, iwt2, WaveletName};

fn image(size: usize) -> Tensor {
    let mut rng = Prng::new(42);
    Tensor::from_fn(vec![size, size, 3], |_| rng.uniform())
}

fn bench_dwt(c: &mut Criterion) {
    let img = image(64);
    let mut group = c.benchmark_group("dwt2-64x64x3");
    for name in WaveletName::ALL {
        let bank = filter_bank_for(name);
        group.bench_function(name.as_str(), |b| b.iter(|| dwt2(&img, &bank).unwrap()));
    }
    group.finish();

    let bank = filter_bank_for(WaveletName::Haar);
    let sub = dwt2(&img, &bank).unwrap();
    c.bench_function("iwt2-64x64x3-haar", |b| b.iter(|| iwt2(&sub, &bank).unwrap()));
}

fn bench_dtcwt(c: &mut Criterion) {
    let img = image(64);
    let mut group = c.benchmark_group("dtcwt2-level1-64x64x3");
    for name in DtcwtName::ALL {
        let filters = dtcwt_filters_for(name).unwrap();
        group.bench_function(name.as_str(), |b| {
            b.iter(|| dtcwt2_level1(&img, &filters).unwrap())
        });
    }
    group.finish();
}

fn bench_whf(c: &mut Criterion) {
    let img = image(64);
    let mut group = c.benchmark_group("whf-extract-64x64x3");
    for wavelet in [
        WhfWavelet::Real(WaveletName::Haar),
        WhfWavelet::Real(WaveletName::Coif2),
        WhfWavelet::Complex(DtcwtName::SyA),
    ] {
        group.bench_function(wavelet.as_str(), |b| {
            b.iter(|| whf_extract(&img, wavelet).unwrap())
        });
    }
    group.finish();
}

fn bench_fourier(c: &mut Criterion) {
    let img = image(64);
    let cfg = FreqMaskConfig::new(0.25, MaskMode::Highpass).unwrap();
    c.bench_function("fourier-filter-64x64x3", |b| {
        b.iter_batched(
            || img.clone(),
            |img| fourier_filter(&img, &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_dwt, bench_dtcwt, bench_whf, bench_fourier);
criterion_main!(benches);
