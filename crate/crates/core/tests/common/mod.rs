#![allow(dead_code)]

use std::path::PathBuf;

use cmpc::io::{self, Dtype};
use cmpc::linguistic::Mode;
use cmpc::pipeline::{toy_dataset, train_toy, Config, Model, Sample};
use cmpc::tensor::ParamStore;

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_cmpc"))
}

pub struct Fixture {
    pub cfg: Config,
    pub store: ParamStore,
    pub sample: Sample,
}

/// Toy image model trained for a few steps, and one 6×6 sample.
pub fn fixture() -> Fixture {
    let cfg = Config {
        seed: 11,
        lr: 1e-2,
        ..Config::toy(Mode::Image)
    };
    let data = toy_dataset(&cfg, 3, 6, 6, 11);
    let store = train_toy(&data, &cfg, 30).expect("fixture training").params;
    let sample = data.into_iter().next().unwrap();
    Fixture { cfg, store, sample }
}

/// Every committed golden file with the bytes it must hold.
pub fn golden_files() -> Vec<(&'static str, Vec<u8>)> {
    let fx = fixture();
    let model = Model::new(&fx.cfg, &fx.store).unwrap();
    let mut unmasked = fx.sample.clone();
    unmasked.mask = cmpc::tensor::Tensor::zeros(&[0]);
    let logits = model.predict(&unmasked).unwrap();
    let tokens: Vec<String> = fx.sample.tokens.iter().map(|t| t.to_string()).collect();
    vec![
        ("config.toml", fx.cfg.to_toml().into_bytes()),
        ("model.ckpt", io::encode_checkpoint(&fx.store)),
        ("features_l3.cmpc", io::encode_tensor(&fx.sample.features[0], Dtype::F64)),
        ("features_l4.cmpc", io::encode_tensor(&fx.sample.features[1], Dtype::F64)),
        ("features_l5.cmpc", io::encode_tensor(&fx.sample.features[2], Dtype::F64)),
        ("features_l3_f32.cmpc", io::encode_tensor(&fx.sample.features[0], Dtype::F32)),
        ("tokens.txt", format!("{}\n", tokens.join(" ")).into_bytes()),
        ("gt.pgm", io::encode_pgm(&fx.sample.mask).unwrap()),
        ("logits.cmpc", io::encode_tensor(&logits, Dtype::F64)),
        ("mask.pgm", io::encode_pgm(&io::binarize_logits(&logits)).unwrap()),
    ]
}
