//! Expected per-block output shapes of the 128×128 networks at full width.

use glyphgen_core::fontnet::{Discriminator, FontModel, Generator, ModelConfig};
use numcore::Tensor;

pub fn paper_config() -> ModelConfig {
    ModelConfig::paper_scale(4, 6)
}

pub const REFERENCE_ENCODER: [[usize; 3]; 7] = [
    [32, 128, 128],
    [64, 64, 64],
    [128, 32, 32],
    [128, 32, 32],
    [128, 32, 32],
    [256, 16, 16],
    [256, 16, 16],
];

pub const CONTENT_ENCODER: [[usize; 3]; 5] = [
    [32, 128, 128],
    [64, 64, 64],
    [128, 32, 32],
    [256, 16, 16],
    [256, 16, 16],
];

pub const DECODER: [[usize; 3]; 7] = [
    [256, 16, 16],
    [256, 16, 16],
    [256, 16, 16],
    [128, 32, 32],
    [64, 64, 64],
    [32, 128, 128],
    [1, 128, 128],
];

pub const DISCRIMINATOR: [&[usize]; 6] = [&[32, 64, 64], &[64, 32, 32], &[128, 16, 16], &[256, 8, 8], &[256, 8, 8], &[512]];

fn rows<const N: usize>(t: &[[usize; 3]; N]) -> Vec<Vec<usize>> {
    t.iter().map(|r| r.to_vec()).collect()
}

/// `(network, expected chain, actual chain)` for the four networks.
pub fn chains() -> Vec<(&'static str, Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    let cfg = paper_config();
    let gen = Generator::new(&cfg).unwrap();
    let disc = Discriminator::new(&cfg).unwrap();
    let image = [1, 128, 128];
    vec![
        (
            "reference encoder",
            rows(&REFERENCE_ENCODER),
            gen.reference_encoder.shape_chain(&image).unwrap(),
        ),
        (
            "content encoder",
            rows(&CONTENT_ENCODER),
            gen.content_encoder.shape_chain(&image).unwrap(),
        ),
        ("decoder", rows(&DECODER), gen.decoder.shape_chain(&[512, 16, 16]).unwrap()),
        (
            "discriminator",
            DISCRIMINATOR.iter().map(|r| r.to_vec()).collect(),
            disc.backbone.shape_chain(&image).unwrap(),
        ),
    ]
}

/// Shapes produced by an actual forward pass: generated image, attention
/// maps per head, and discriminator logit.
pub fn forward_shapes() -> (Vec<usize>, Vec<Vec<usize>>, Vec<usize>) {
    let model = FontModel::<f32>::new(&paper_config(), 0).unwrap();
    let img = Tensor::<f32>::full(&[1, 128, 128], 0.25);
    let out = model.infer(&img, &[img.clone(), img.clone(), img.clone()], true).unwrap();
    let mut g = numcore::Graph::training();
    let p = model.d_params.bind(&mut g, false).unwrap();
    let x = g.constant(img).unwrap();
    let logit = model.discriminator.discriminate(&mut g, &p, x, 0, 0).unwrap();
    (
        out.image.shape().to_vec(),
        out.attention.iter().map(|a| a.shape().to_vec()).collect(),
        g.shape(logit).to_vec(),
    )
}
