//! Cheap learning smoke checks on reduced data.

use aq_core::model::{self, evaluate, TrainConfig};
use aq_core::synth;

#[test]
fn one_epoch_on_1k_subset_clears_sixty_percent() {
    // 1000 training images, one epoch, scored on a held-out slice. The
    // threshold was calibrated once on the stand-in corpus and pinned.
    let train = synth::generate_dataset(
        &[100; 10],
        31,
        "smoke-train",
        aq_core::dataset::Provenance::MnistTrain,
    )
    .unwrap()
    .to_unit();
    let held_out = synth::generate_dataset(
        &[30; 10],
        32,
        "smoke-test",
        aq_core::dataset::Provenance::MnistTest,
    )
    .unwrap();

    // Batch 16 so one epoch is 63 updates; the default 64 gives only 16,
    // which is not enough signal for a pass/fail line.
    let cfg = TrainConfig { epochs: 1, batch_size: 16, ..TrainConfig::default() };
    let mut model = model::build_lenet(cfg.seed);
    model::train(&mut model, &train, &cfg, &[]).unwrap();
    let acc = evaluate(&model, &held_out, None, false, 1).unwrap();
    assert!(acc > 0.60, "1-epoch smoke accuracy {acc}");
}
