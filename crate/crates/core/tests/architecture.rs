mod support;

use glyphgen_core::fontnet::{FontModel, ModelConfig};
use support::arch;

#[test]
fn block_shape_chains_at_128() {
    for (name, want, got) in arch::chains() {
        assert_eq!(got, want, "{name}");
    }
}

#[test]
fn full_forward_at_128() {
    let (image, attention, logit) = arch::forward_shapes();
    assert_eq!(image, vec![1, 128, 128]);
    assert_eq!(attention, vec![vec![256, 768]; 8]);
    assert_eq!(logit, vec![1]);
}

#[test]
fn desk_geometry_keeps_the_topology() {
    let cfg = ModelConfig {
        image_size: 32,
        ..arch::paper_config()
    };
    let model = FontModel::<f32>::new(&cfg, 1).unwrap();
    let g = &model.generator;
    assert_eq!(g.reference_encoder.shape_chain(&[1, 32, 32]).unwrap().last().unwrap(), &[256, 4, 4]);
    assert_eq!(g.content_encoder.shape_chain(&[1, 32, 32]).unwrap().last().unwrap(), &[256, 4, 4]);
    assert_eq!(g.decoder.shape_chain(&[512, 4, 4]).unwrap().last().unwrap(), &[1, 32, 32]);
    assert_eq!(g.sam.positions(), 16);
}

#[test]
fn bad_geometry_is_rejected() {
    for cfg in [
        ModelConfig { image_size: 36, ..arch::paper_config() },
        ModelConfig { width: 0.0, ..arch::paper_config() },
        ModelConfig { k: 0, ..arch::paper_config() },
    ] {
        assert!(FontModel::<f32>::new(&cfg, 0).is_err());
    }
}
