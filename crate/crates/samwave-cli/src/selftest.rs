//! `samwave selftest`: the invariant suites, runnable on any checkout.

use samwave_core::autodiff::grad_check;
use samwave_core::dtcwt::{dtcwt2_level1, dtcwt_filters_for, DtcwtName};
use samwave_core::error::{Error, Result};
use samwave_core::freqfeat::{
    fourier_filter, whf_extract, FreqMaskConfig, MaskMode, WhfWavelet,
};
use samwave_core::objectives::{bce, iou_loss, Mask};
use samwave_core::rng::Prng;
use samwave_core::tensor::Tensor;
use samwave_core::wavelets::{build_2d_kernels, dwt2, filter_bank_for, iwt2, WaveletName};
use samwave_core::wvt1;

struct Suite {
    failures: Vec<String>,
}

impl Suite {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        if ok {
            println!("PASS {name}");
        } else {
            println!("FAIL {name}: {detail}");
            self.failures.push(name.to_string());
        }
    }
}

pub fn run() -> Result<()> {
    let mut suite = Suite { failures: Vec::new() };
    let mut rng = Prng::new(0xCAFE);

    // filter bank invariants
    for name in WaveletName::ALL {
        let bank = filter_bank_for(name);
        let sum_lo: f64 = bank.dec_lo.iter().sum();
        let sum_hi: f64 = bank.dec_hi.iter().sum();
        let mut worst = (sum_lo - std::f64::consts::SQRT_2).abs().max(sum_hi.abs());
        for m in 0..bank.dec_lo.len() / 2 {
            let dot: f64 = (0..bank.dec_lo.len() - 2 * m)
                .map(|k| bank.dec_lo[k] * bank.dec_lo[k + 2 * m])
                .sum();
            let want = if m == 0 { 1.0 } else { 0.0 };
            worst = worst.max((dot - want).abs());
        }
        suite.check(
            &format!("wavelet-invariants/{name}"),
            worst < 1e-12,
            format!("residual {worst:.3e}"),
        );
        let k = build_2d_kernels(&bank);
        let all = k.all();
        let mut cross = 0.0f64;
        for (i, (_, a)) in all.iter().enumerate() {
            for (_, b) in all.iter().skip(i + 1) {
                cross = cross.max(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>().abs());
            }
        }
        suite.check(
            &format!("kernel-orthogonality/{name}"),
            cross < 1e-12,
            format!("cross {cross:.3e}"),
        );
        let img = Tensor::from_fn(vec![16, 16, 2], |_| rng.uniform_in(-1.0, 1.0));
        let sub = dwt2(&img, &bank)?;
        let back = iwt2(&sub, &bank)?;
        let err = img.max_abs_diff(&back);
        suite.check(
            &format!("perfect-reconstruction/{name}"),
            err <= 1e-10,
            format!("max abs {err:.3e}"),
        );
    }

    // dual-tree invariants
    for name in DtcwtName::ALL {
        let f = dtcwt_filters_for(name)?;
        let hsum: f64 = f.highpass.iter().sum();
        suite.check(
            &format!("dtcwt-filters/{name}"),
            hsum.abs() < 1e-10,
            format!("highpass sum {hsum:.3e}"),
        );
        let constant = Tensor::full(vec![16, 16, 1], 0.4);
        let oriented = dtcwt2_level1(&constant, &f)?.oriented_energy();
        suite.check(
            &format!("dtcwt-dc-response/{name}"),
            oriented < 1e-18,
            format!("energy {oriented:.3e}"),
        );
    }

    // extraction pipeline
    let constant = Tensor::full(vec![16, 16, 3], 0.7);
    let mut worst = 0.0f64;
    for wavelet in WhfWavelet::ALL {
        let map = whf_extract(&constant, wavelet)?;
        worst = worst.max(map.energy());
    }
    suite.check(
        "whf-zero-response",
        worst < 1e-18,
        format!("energy {worst:.3e}"),
    );
    let img = Tensor::from_fn(vec![12, 12, 1], |_| rng.uniform());
    let hi = fourier_filter(&img, &FreqMaskConfig::new(0.25, MaskMode::Highpass)?)?;
    let lo = fourier_filter(&img, &FreqMaskConfig::new(0.25, MaskMode::Lowpass)?)?;
    let defect = (0..img.numel())
        .map(|i| (hi.data()[i] + lo.data()[i] - img.data()[i]).abs())
        .fold(0.0f64, f64::max);
    suite.check(
        "fourier-mask-complementarity",
        defect < 1e-9,
        format!("defect {defect:.3e}"),
    );

    // objectives
    let gt = Mask::ground_truth(Tensor::new(vec![4], vec![1.0, 0.0, 1.0, 0.0])?)?;
    let half = Mask::prediction(Tensor::full(vec![4], 0.5))?;
    let ln2_err = (bce(&half, &gt)? - std::f64::consts::LN_2).abs();
    suite.check("bce-ln2", ln2_err < 1e-9, format!("err {ln2_err:.3e}"));
    let disjoint = iou_loss(
        &Mask::prediction(Tensor::new(vec![4], vec![0.0, 1.0, 0.0, 1.0])?)?,
        &gt,
    )?;
    suite.check("iou-disjoint", disjoint == 1.0, format!("loss {disjoint}"));

    // autodiff
    let w = Tensor::from_fn(vec![3, 3], |_| rng.uniform_in(-1.0, 1.0));
    let err = grad_check(&[w], 1e-5, |tape, vs| {
        let x = tape.leaf(&Tensor::from_fn(vec![3, 2], |_| 0.3));
        let y = tape.gelu(tape.matmul(vs[0], x)?)?;
        tape.sum(y)
    })?;
    suite.check("grad-check", err <= 1e-6, format!("err {err:.3e}"));

    // tensor file round trip
    let t = Tensor::from_fn(vec![2, 3, 4], |_| rng.uniform_in(-5.0, 5.0));
    let mut buf = Vec::new();
    wvt1::write_wvt1(&mut buf, &t)?;
    let back = wvt1::read_wvt1(&mut buf.as_slice())?;
    suite.check(
        "wvt1-round-trip",
        back.shape() == t.shape() && back.data() == t.data(),
        "mismatch".into(),
    );

    if suite.failures.is_empty() {
        println!("selftest: all suites green");
        Ok(())
    } else {
        Err(Error::Integrity(format!(
            "selftest failures: {}",
            suite.failures.join(", ")
        )))
    }
}
