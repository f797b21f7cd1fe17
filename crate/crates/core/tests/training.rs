use glyph_decomp::{DecompositionTable, SAMPLE_TABLE};
use glyphgen_core::checkpoint::Checkpoint;
use glyphgen_core::glyphsynth::{build_dataset, Dataset, DatasetSpec};
use glyphgen_core::trainer::{
    from_checkpoint, generator_forward, generator_phase, output_prior_logit, self_reconstruct, to_checkpoint, train,
    Phase, StepReport, TrainConfig, Trainer,
};
use glyphgen_core::CoreError;
use numcore::Graph;

fn data() -> Dataset {
    let table = DecompositionTable::parse(SAMPLE_TABLE).unwrap();
    build_dataset(&table, &DatasetSpec { styles: 4, seen_styles: 3, ..DatasetSpec::default() }).unwrap()
}

fn small(seed: u64) -> TrainConfig {
    TrainConfig {
        width: 0.125,
        iterations: 3,
        log_every: 1,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn phases_touch_only_their_own_network() {
    let data = data();
    let mut t = Trainer::new(small(1), &data).unwrap();
    let (g0, d0) = (t.model.g_params.clone(), t.model.d_params.clone());
    let batch = t.next_batch(&data).unwrap();
    let mut seen = Vec::new();
    t.training_step_observed(&batch, |phase, m| {
        seen.push(phase);
        match phase {
            Phase::Discriminator => {
                assert_eq!(m.g_params, g0, "D step moved G");
                assert_ne!(m.d_params, d0, "D step left D unchanged");
            }
            Phase::Generator => {
                assert_ne!(m.g_params, g0, "G step left G unchanged");
            }
        }
    })
    .unwrap();
    assert_eq!(seen, vec![Phase::Discriminator, Phase::Generator]);
    let d1 = t.model.d_params.clone();
    let batch = t.next_batch(&data).unwrap();
    t.training_step(&batch).unwrap();
    assert_ne!(t.model.d_params, d1, "second D step left D unchanged");
}

#[test]
fn g_step_leaves_d_untouched() {
    let data = data();
    let mut t = Trainer::new(small(2), &data).unwrap();
    let batch = t.next_batch(&data).unwrap();
    let mut after_d = None;
    t.training_step_observed(&batch, |phase, m| match phase {
        Phase::Discriminator => after_d = Some(m.d_params.clone()),
        Phase::Generator => assert_eq!(Some(&m.d_params), after_d.as_ref()),
    })
    .unwrap();
}

#[test]
fn zero_l1_weight_makes_g_blind_to_target_pixels() {
    let data = data();
    let cfg = TrainConfig {
        lambda_l1: 0.0,
        use_sr: false,
        ..small(3)
    };
    let t = Trainer::new(cfg.clone(), &data).unwrap();
    let refs = data.mapped_refs(0);
    let a = Trainer::item(&data, 0, 0, &refs);
    let mut b = a.clone();
    b.target = data.glyph(1, 5).tensor();
    let grads = |item| {
        let batch = vec![item];
        let mut pass = generator_forward(&t.model.generator, &t.model.g_params, &cfg, &batch).unwrap();
        generator_phase(&mut pass, &t.model.discriminator, &t.model.d_params, &cfg, &batch).unwrap().0
    };
    let (ga, gb) = (grads(a.clone()), grads(b));
    assert_eq!(ga, gb);
    let with_l1 = TrainConfig { lambda_l1: 0.1, ..cfg.clone() };
    let batch = vec![a];
    let mut pass = generator_forward(&t.model.generator, &t.model.g_params, &with_l1, &batch).unwrap();
    let gc = generator_phase(&mut pass, &t.model.discriminator, &t.model.d_params, &with_l1, &batch).unwrap().0;
    assert_ne!(ga, gc);
}

#[test]
fn self_reconstruction_shares_the_main_parameters() {
    let data = data();
    let t = Trainer::new(small(4), &data).unwrap();
    let item = Trainer::item(&data, 0, 3, &data.mapped_refs(3));
    let mut g = Graph::training();
    let p = t.model.g_params.bind(&mut g, true).unwrap();
    let x = g.constant(item.content_image.clone()).unwrap();
    let y = g.constant(item.target.clone()).unwrap();
    let f_c = t.model.generator.encode_content(&mut g, &p, x).unwrap();
    let sr = self_reconstruct(&t.model.generator, &mut g, &p, f_c, y, true).unwrap();
    assert_eq!(g.shape(sr), &[1, 32, 32]);
    let direct = t.model.infer(&item.content_image, std::slice::from_ref(&item.target), true).unwrap();
    assert_eq!(g.value(sr), &direct.image);
    // one loss through the SR output reaches every generator tensor on the shared tape
    let l = g.mean(sr).unwrap();
    let grads = g.backward(l).unwrap();
    let touched = p.vars().iter().filter(|&&v| grads.get(v).is_some()).count();
    assert!(touched > t.model.g_params.len() / 2);
}

fn run(seed: u64) -> Vec<StepReport> {
    let data = data();
    let mut t = Trainer::new(small(seed), &data).unwrap();
    (0..3)
        .map(|_| {
            let b = t.next_batch(&data).unwrap();
            t.training_step(&b).unwrap()
        })
        .collect()
}

#[test]
fn reports_are_reproducible_and_finite() {
    let a = run(5);
    assert_eq!(a, run(5));
    assert_ne!(a, run(6));
    assert!(a.iter().all(|r| r.is_finite()));
}

#[test]
fn non_finite_input_is_reported_as_divergence() {
    let data = data();
    let mut t = Trainer::new(small(7), &data).unwrap();
    let mut batch = t.next_batch(&data).unwrap();
    batch[0].target.data_mut()[0] = f32::NAN;
    match t.training_step(&batch) {
        Err(CoreError::Diverged { iteration, .. }) => assert_eq!(iteration, 1),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.iteration)),
    }
}

#[test]
fn ablation_switches_change_the_step() {
    let data = data();
    let base = small(8);
    let mut reports = Vec::new();
    for cfg in [
        base.clone(),
        TrainConfig { use_sam: false, ..base.clone() },
        TrainConfig { use_sr: false, ..base.clone() },
        TrainConfig { use_rs: false, ..base.clone() },
    ] {
        let sr_off = !cfg.use_sr;
        let mut t = Trainer::new(cfg, &data).unwrap();
        let b = t.next_batch(&data).unwrap();
        let r = t.training_step(&b).unwrap();
        assert_eq!(r.loss_l1_sr == 0.0, sr_off);
        reports.push(r);
    }
    for i in 1..reports.len() {
        assert_ne!(reports[0], reports[i]);
    }
}

#[test]
fn output_bias_starts_at_the_ink_prior() {
    let data = data();
    let t = Trainer::new(TrainConfig { output_prior: true, ..small(9) }, &data).unwrap();
    let off = Trainer::new(small(9), &data).unwrap();
    let name = t.model.generator.output_bias_name();
    let want = output_prior_logit(&data, &data.train_pairs());
    assert!(want < -1.0);
    assert_eq!(t.model.g_params.get(&name).unwrap().data(), &[want as f32]);
    assert_eq!(off.model.g_params.get(&name).unwrap().data(), &[0.0]);
}

#[test]
fn training_log_and_checkpoint_round_trip() {
    let data = data();
    let out = train(small(10), &data, |_| {}).unwrap();
    let lines: Vec<&str> = out.log.lines().collect();
    assert_eq!(lines[0], StepReport::TSV_HEADER);
    assert_eq!(lines.len(), 4);
    let ck = to_checkpoint(&out.model, &small(10), &data, 3);
    let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes()).unwrap();
    let restored = from_checkpoint(&back).unwrap();
    assert_eq!(restored.config, small(10));
    assert_eq!(restored.data, data);
    assert_eq!(restored.model.g_params, out.model.g_params);
    let item = Trainer::item(&data, 3, 35, &data.mapped_refs(35));
    let a = out.model.infer(&item.content_image, &item.refs, true).unwrap();
    let b = restored.model.infer(&item.content_image, &item.refs, true).unwrap();
    assert_eq!(a.image, b.image);
}

#[test]
fn config_is_validated() {
    let data = data();
    for cfg in [
        TrainConfig { lr_g: 0.0, ..small(0) },
        TrainConfig { lambda_adv: -1.0, ..small(0) },
        TrainConfig { batch_size: 0, ..small(0) },
        TrainConfig { k: 2, ..small(0) },
    ] {
        assert!(Trainer::new(cfg, &data).is_err());
    }
}
