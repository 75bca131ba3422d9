// temporary tuning probe - removed before finalizing
use samwave_core::model::EncoderConfig;
use samwave_core::synthdata::{generate, Task};
use samwave_core::train::*;
use std::time::Instant;

#[test]
#[ignore]
fn probe_default_scale() {
    let t0 = Instant::now();
    let source_train = generate(Task::Blobs, 100, 200, 64).unwrap();
    let source_test = generate(Task::Blobs, 900, 50, 64).unwrap();
    println!("datagen blobs: {:.1?}", t0.elapsed());

    let t0 = Instant::now();
    let pre = pretrain_encoder(
        &source_train,
        &source_test,
        &PretrainConfig {
            seed: 1,
            epochs: 4,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 1e-4,
            encoder: EncoderConfig::default(),
        },
    )
    .unwrap();
    println!(
        "pretrain 4 epochs: {:.1?}, source mIoU {:.3}, first loss {:.3}, last loss {:.3}",
        t0.elapsed(),
        pre.source_miou,
        pre.log.first().unwrap().loss,
        pre.log.last().unwrap().loss
    );

    let t0 = Instant::now();
    let camo_train = generate(Task::Camouflage, 7, 200, 64).unwrap();
    let camo_test = generate(Task::Camouflage, 500, 50, 64).unwrap();
    println!("datagen camo: {:.1?}", t0.elapsed());

    for (label, feature, epochs) in [
        ("decoder-only", None, 3usize),
        ("haar", Some(FeatureSource::wavelet("haar").unwrap()), 3),
        ("sy-a", Some(FeatureSource::wavelet("sy-a").unwrap()), 3),
    ] {
        let t0 = Instant::now();
        let out = adapt_train(
            &camo_train,
            &pre.encoder,
            &TrainConfig {
                seed: 7,
                epochs,
                batch_size: 8,
                lr: 1e-3,
                weight_decay: 1e-4,
                loss: LossKind::CombinedCod,
                gamma: 16,
                feature,
            },
        )
        .unwrap();
        let train_t = t0.elapsed();
        let t1 = Instant::now();
        let (agg, _) = evaluate(&out.model, &camo_test, "camo").unwrap();
        println!(
            "{label}: train {:.1?} eval {:.1?} mIoU {:.3} (loss {:.3} -> {:.3})",
            train_t,
            t1.elapsed(),
            agg.miou,
            out.log.first().unwrap().loss,
            out.log.last().unwrap().loss
        );
    }
}
