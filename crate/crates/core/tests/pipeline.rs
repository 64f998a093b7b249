use dgaug::harness::{run_step1, run_step2, run_step3, Datasets, Mode, PipelineConfig, RunDir};
use dgaug::segtoy::{gen_toy_dataset_sized, Domain, GenPosition};
use dgaug::Error;

fn tiny(mode: Mode) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        mode,
        positions: vec![GenPosition::AfterConv1],
        ..PipelineConfig::default()
    };
    cfg.data.image_size = 32;
    cfg.data.train.n = 8;
    cfg.data.source_test.n = 4;
    cfg.data.target_test.n = 4;
    for step in [&mut cfg.step1, &mut cfg.step3] {
        step.train.epochs = 1;
        step.train.batch_size = 4;
    }
    cfg.step2.max_steps = Some(2);
    cfg
}

#[test]
fn toy_datasets_are_deterministic() {
    let a = gen_toy_dataset_sized(4, 3, Domain::Target, 5, 32).unwrap();
    let b = gen_toy_dataset_sized(4, 3, Domain::Target, 5, 32).unwrap();
    let c = gen_toy_dataset_sized(4, 4, Domain::Target, 5, 32).unwrap();
    assert_eq!(a.images, b.images);
    assert_eq!(a.labels, b.labels);
    assert_ne!(a.images, c.images);
}

#[test]
fn later_stages_need_earlier_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Mode::Full);
    let data = Datasets::load(&cfg.data).unwrap();
    let run = RunDir(dir.path().to_path_buf());
    match run_step2(&cfg, &run, &data, GenPosition::AfterConv1) {
        Err(Error::MissingStage { stage, .. }) => assert_eq!(stage, "step1"),
        Err(e) => panic!("expected MissingStage, got {e}"),
        Ok(_) => panic!("step 2 ran without step 1"),
    }
    run_step1(&cfg, &run, &data).unwrap();
    match run_step3(&cfg, &run, &data, GenPosition::AfterConv1) {
        Err(Error::MissingStage { stage, .. }) => assert_eq!(stage, "step2/after_conv1"),
        Err(e) => panic!("expected MissingStage, got {e}"),
        Ok(_) => panic!("step 3 ran without step 2"),
    }
}

#[test]
fn matching_checkpoints_are_reused() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Mode::RicaOnly);
    let data = Datasets::load(&cfg.data).unwrap();
    let run = RunDir(dir.path().to_path_buf());
    let ckpt = run.step1().join("model.ckpt");

    let first = run_step1(&cfg, &run, &data).unwrap();
    let stamp = std::fs::metadata(&ckpt).unwrap().modified().unwrap();
    let again = run_step1(&cfg, &run, &data).unwrap();
    assert_eq!(first.config_hash, again.config_hash);
    assert_eq!(std::fs::metadata(&ckpt).unwrap().modified().unwrap(), stamp);

    // Mode is not part of the Step-1 inputs; the learning rate is.
    cfg.mode = Mode::Full;
    assert_eq!(run_step1(&cfg, &run, &data).unwrap().config_hash, first.config_hash);
    cfg.step1.train.lr *= 2.0;
    let changed = run_step1(&cfg, &run, &data).unwrap();
    assert_ne!(changed.config_hash, first.config_hash);
}
