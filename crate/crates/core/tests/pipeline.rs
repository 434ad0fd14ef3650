use texcoord::data::checkpoint::{encode_checkpoint, load_checkpoint, save_checkpoint};
use texcoord::data::dataset::Split;
use texcoord::data::synth::{generate_pair, identity_mask, SceneConfig};
use texcoord::loss::{gan_discriminator_loss, ssim_masked};
use texcoord::nn::{Discriminator, Inpainter, ParamStore, Refiner};
use texcoord::pipeline::eval::image_metrics;
use texcoord::pipeline::prepare::{complete_textures, garment_view, stage1_inputs, stage2_inputs};
use texcoord::pipeline::{
    evaluate, train_stage1, train_stage2, Ablation, PairSource, Pipeline, PipelineConfig, INPAINTER_CKPT,
};
use texcoord::tensor::optim::{AdamConfig, AdamState};
use texcoord::tensor::Graph;

fn toy() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.scene = SceneConfig {
        image_width: 32,
        image_height: 32,
        texture_width: 32,
        texture_height: 32,
        ..SceneConfig::default()
    };
    c.inpainter.widths = vec![4, 8];
    c.refiner.widths = [4, 8, 8, 8];
    c.refiner.res_blocks = 1;
    c.discriminator.width = 4;
    c.features.widths = [4, 8, 8];
    c.train_pairs = 48;
    c.test_pairs = 3;
    c.stage1.steps = 50;
    c.stage2.steps = 20;
    c.seed = 5;
    c
}

fn fresh_pipeline(cfg: PipelineConfig) -> Pipeline {
    let f = Inpainter::new(cfg.inpainter_config()).unwrap().init_params::<f32>(1).unwrap();
    let g = Refiner::new(cfg.refiner_config()).unwrap().init_params::<f32>(2).unwrap();
    Pipeline::new(cfg, f, &g).unwrap()
}

#[test]
fn stage1_is_bit_reproducible() {
    let cfg = toy();
    let a = train_stage1(&cfg, None).unwrap();
    let b = train_stage1(&cfg, None).unwrap();
    assert_eq!(encode_checkpoint(&a.params), encode_checkpoint(&b.params));
    assert_eq!(a.log.rows.len(), 50);
    assert!(a.log.totals().iter().all(|v| v.is_finite()));
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(encode_checkpoint(&train_stage1(&other, None).unwrap().params), encode_checkpoint(&a.params));
}

#[test]
fn zero_steps_return_the_initialisation() {
    let mut cfg = toy();
    cfg.stage1.steps = 0;
    let o = train_stage1(&cfg, None).unwrap();
    let init = Inpainter::new(cfg.inpainter_config()).unwrap().init_params::<f32>(cfg.seed).unwrap();
    assert_eq!(encode_checkpoint(&o.params), encode_checkpoint(&init));
    assert!(o.log.rows.is_empty());
}

#[test]
fn stage2_leaves_stage1_checkpoint_untouched() {
    let cfg = toy();
    let dir = tempfile::tempdir().unwrap();
    let s1 = train_stage1(&cfg, Some(dir.path())).unwrap();
    let path = dir.path().join(INPAINTER_CKPT);
    let before = std::fs::read(&path).unwrap();
    let f = load_checkpoint(&path).unwrap();
    assert_eq!(encode_checkpoint(&f), encode_checkpoint(&s1.params));
    let s2 = train_stage2(&cfg, &f, Some(dir.path())).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), before);
    assert!(s2.log.totals().iter().all(|v| v.is_finite()));
    assert!(s2.log.term("adv_d").iter().all(|&v| v > 0.0));

    let again = train_stage2(&cfg, &f, None).unwrap();
    assert_eq!(encode_checkpoint(&again.combined().unwrap()), encode_checkpoint(&s2.combined().unwrap()));
}

#[test]
fn reconstruction_error_falls_without_adversary() {
    let mut cfg = toy();
    cfg.scene.min_rotation_deg = 0.0;
    cfg.scene.max_rotation_deg = 0.0;
    cfg.stage2_weights.adversarial = 0.0;
    cfg.stage2.steps = 200;
    cfg.stage2.adam.lr = 2e-3;
    let f = train_stage1(&cfg, None).unwrap().params;
    let log = train_stage2(&cfg, &f, None).unwrap().log;
    let l1 = log.term("l1");
    assert!(log.term("adv_d").iter().all(|&v| v == 0.0));
    // Means over consecutive quarters of the 200 steps.
    let means: Vec<f64> = l1.chunks(50).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}

#[test]
fn discriminator_step_lowers_its_loss_on_the_batch() {
    let cfg = toy();
    let d_net = Discriminator::new(cfg.discriminator_config()).unwrap();
    let mut params = d_net.init_params::<f32>(3).unwrap();
    let p = generate_pair(11, &cfg.scene).unwrap();
    let real = p.target.to_tensor::<f32>();
    let fake = p.source.to_tensor::<f32>();
    let cond = p.target_uv.to_tensor::<f32>();
    let loss = |params: &ParamStore<f32>, step: Option<&mut AdamState<f32>>, store: &mut Option<ParamStore<f32>>| {
        let mut g = Graph::new();
        let pd = params.bind(&mut g, true);
        let (r, f, c) = (g.constant(real.clone()), g.constant(fake.clone()), g.constant(cond.clone()));
        let lr = d_net.forward(&mut g, &pd, r, c).unwrap();
        let lf = d_net.forward(&mut g, &pd, f, c).unwrap();
        let dl = gan_discriminator_loss(&mut g, lr, lf).unwrap();
        let v = g.value(dl).item();
        if let Some(state) = step {
            g.backward(dl).unwrap();
            let mut next = params.clone();
            next.adam_update(&g, &pd, state, &AdamConfig::default()).unwrap();
            *store = Some(next);
        }
        v
    };
    let mut state = AdamState::new();
    let mut next = None;
    let before = loss(&params, Some(&mut state), &mut next);
    params = next.unwrap();
    let after = loss(&params, None, &mut None);
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn garment_transfer_model_trains_and_transfers() {
    let mut cfg = toy();
    cfg.garment_transfer = true;
    cfg.stage2.steps = 5;
    let f = train_stage1(&cfg, None).unwrap().params;
    let s2 = train_stage2(&cfg, &f, None).unwrap();
    assert!(s2.log.totals().iter().all(|v| v.is_finite()));
    let pipe = Pipeline::new(cfg.clone(), f, &s2.refiner).unwrap();
    let (a, b) = (generate_pair(1, &cfg.scene).unwrap(), generate_pair(2, &cfg.scene).unwrap());
    let out = pipe.transfer_garment(&a.target, &a.target_uv, &b.source, &b.source_uv).unwrap();
    assert_eq!((out.output.width(), out.output.height()), (32, 32));
    let err = pipe.infer(&a.source, &a.source_uv, &a.target_uv).unwrap_err();
    assert!(err.to_string().contains("identity"));
}

#[test]
fn garment_view_drops_the_identity_band() {
    let cfg = SceneConfig::default();
    let a = generate_pair(3, &cfg).unwrap();
    let band = identity_mask(&a.source_uv, cfg.identity_band);
    assert!(band.iter().any(|&b| b));
    let (img, uv) = garment_view(&a.source, &a.source_uv, cfg.identity_band);
    for y in 0..uv.height() {
        for x in 0..uv.width() {
            let k = y * uv.width() + x;
            if band[k] {
                assert!(!uv.is_valid(x, y));
                assert_eq!(img.get(x, y), [0.0; 3]);
            } else {
                assert_eq!(uv.get(x, y), a.source_uv.get(x, y));
                assert_eq!(img.get(x, y), a.source.get(x, y));
            }
        }
    }
}

#[test]
fn transfer_needs_a_garment_model() {
    let cfg = toy();
    let pipe = fresh_pipeline(cfg.clone());
    let a = generate_pair(1, &cfg.scene).unwrap();
    let err = pipe.transfer_garment(&a.target, &a.target_uv, &a.source, &a.source_uv).unwrap_err();
    assert!(err.to_string().contains("garment"));
}

#[test]
fn colour_ablation_has_no_coordinates_downstream() {
    let mut cfg = toy();
    cfg.ablation = Ablation::RgbInpainting;
    let pipe = fresh_pipeline(cfg.clone());
    let a = generate_pair(4, &cfg.scene).unwrap();
    let r = pipe.infer(&a.source, &a.source_uv, &a.target_uv).unwrap();
    assert!(r.intermediates.completed_coords.is_none());
    assert!(r.intermediates.warp.is_none());
}

#[test]
fn textureless_ablation_sees_only_pose_channels() {
    let mut cfg = toy();
    cfg.ablation = Ablation::NoTextures;
    assert_eq!(cfg.refiner_config().target_channels, 5);
    let f_net = Inpainter::new(cfg.inpainter_config()).unwrap();
    let f = f_net.init_params::<f32>(0).unwrap();
    let a = generate_pair(4, &cfg.scene).unwrap();
    let s1 = stage1_inputs(cfg.ablation, &a.source, &a.source_uv, None, cfg.texture_extent()).unwrap();
    let c = complete_textures(&f_net, &f, &[&s1], &[&a.source]).unwrap();
    let s2 = stage2_inputs(cfg.ablation, &a.source, &a.source_uv, &a.target_uv, &c[0], None).unwrap();
    assert_eq!(s2.target_stack.shape(), &[1, 5, 32, 32]);
    let uv = a.target_uv.to_tensor::<f32>();
    assert_eq!(&s2.target_stack.data()[..uv.numel()], uv.data());
}

#[test]
fn inference_is_deterministic_and_checks_inputs() {
    let cfg = toy();
    let pipe = fresh_pipeline(cfg.clone());
    let a = generate_pair(6, &cfg.scene).unwrap();
    let r1 = pipe.infer(&a.source, &a.source_uv, &a.target_uv).unwrap();
    let r2 = pipe.infer(&a.source, &a.source_uv, &a.target_uv).unwrap();
    assert_eq!(r1.output, r2.output);
    assert!(r1.intermediates.completed_coords.as_ref().unwrap().is_complete());

    let small = generate_pair(6, &SceneConfig::default()).unwrap();
    let err = pipe.infer(&small.source, &small.source_uv, &small.target_uv).unwrap_err();
    assert!(err.to_string().contains("resolution mismatch"));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.ckpt");
    let err = Pipeline::load(&missing, &missing, None).err().unwrap();
    assert!(err.to_string().contains("not found"));
}

#[test]
fn evaluation_rows_and_self_scores() {
    let cfg = toy();
    let pipe = fresh_pipeline(cfg.clone());
    let pairs = PairSource::for_split(&cfg, Split::Test).unwrap();
    let report = evaluate(&pipe, &pairs).unwrap();
    assert_eq!(report.rows.len(), pairs.len());
    assert!(report.rows.iter().all(|r| r.texture_l1.is_some()));
    let a = pairs.get(0).unwrap();
    let (s, l1) = image_metrics(&a.target, &a.target).unwrap();
    assert_eq!(l1, 0.0);
    assert!((s - 1.0).abs() <= 1e-12);
}

#[test]
fn checkpoints_reload_into_an_equal_pipeline() {
    let cfg = toy();
    let dir = tempfile::tempdir().unwrap();
    let f = Inpainter::new(cfg.inpainter_config()).unwrap().init_params::<f32>(1).unwrap();
    let g = Refiner::new(cfg.refiner_config()).unwrap().init_params::<f32>(2).unwrap();
    let (fp, gp) = (dir.path().join("f.ckpt"), dir.path().join("g.ckpt"));
    save_checkpoint(&fp, &f, Some(&cfg.to_json())).unwrap();
    save_checkpoint(&gp, &g, Some(&cfg.to_json())).unwrap();
    let loaded = Pipeline::load(&fp, &gp, None).unwrap();
    assert_eq!(loaded.config, cfg);
    let a = generate_pair(9, &cfg.scene).unwrap();
    let x = loaded.infer(&a.source, &a.source_uv, &a.target_uv).unwrap();
    let y = Pipeline::new(cfg, f, &g).unwrap().infer(&a.source, &a.source_uv, &a.target_uv).unwrap();
    assert_eq!(x.output, y.output);
}

/// Trained on toy scenes, the same pose in and out reproduces the body.
#[test]
fn identity_pose_reconstruction_after_training() {
    let mut cfg = toy();
    cfg.scene.max_rotation_deg = 30.0;
    cfg.refiner.widths = [12, 24, 24, 24];
    cfg.stage1.steps = 150;
    cfg.stage2.steps = 1000;
    cfg.stage2.adam.lr = 5e-3;
    cfg.stage2.final_lr_fraction = 0.1;
    cfg.stage2_weights.nn_window = 1;
    cfg.stage2_weights.feature = 0.1;
    cfg.stage2_weights.style = 0.1;
    let f = train_stage1(&cfg, None).unwrap().params;
    let g = train_stage2(&cfg, &f, None).unwrap().refiner;
    let pipe = Pipeline::new(cfg.clone(), f, &g).unwrap();
    let mut total = 0.0;
    for i in 0..4 {
        let a = generate_pair(1000 + i, &cfg.scene).unwrap();
        let r = pipe.infer(&a.source, &a.source_uv, &a.source_uv).unwrap();
        let valid = identity_mask(&a.source_uv, f64::INFINITY);
        total += ssim_masked(&r.output, &a.source, &valid).unwrap();
    }
    let mean = total / 4.0;
    assert!(mean >= 0.85, "{mean}");
}
