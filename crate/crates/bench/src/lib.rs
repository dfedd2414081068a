//! Shared fixtures for the benchmarks.

use rowsense::harness::{model_for, EvalFrame, ExperimentConfig, Setup};
use rowsense::measurement::LikelihoodModel;

/// A short vineyard row: the model from 20 template frames and a few
/// evaluation frames.
pub fn vineyard_fixture() -> (ExperimentConfig, LikelihoodModel, Vec<EvalFrame>) {
    let mut cfg = ExperimentConfig::preset("vineyard").expect("preset");
    cfg.scene.row_length = 20.0;
    cfg.template_frames = 20;
    cfg.eval_stride = 10;
    cfg.eval_limit = 4;
    let setup = Setup::new(&cfg).expect("setup");
    let template = setup.template(&cfg, &cfg.sensor, &cfg.template, cfg.template_frames).expect("template");
    let model = model_for(&cfg, &template).expect("model");
    let frames = setup.eval_frames(&cfg, &cfg.sensor);
    (cfg, model, frames)
}
