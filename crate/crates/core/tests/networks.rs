use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use texcoord::loss::{stage1_loss, Stage1Targets, Stage1Weights};
use texcoord::nn::{
    count_params, Activation, Conv, Discriminator, DiscriminatorConfig, GatedConv, GatedConvSpec, Inpainter,
    InpainterConfig, ParamStore, Refiner, RefinerConfig, RefinerInput, RefinerMode, WarpPyramid,
};
use texcoord::tensor::gradcheck::{check, check_elements, project};
use texcoord::tensor::{Graph, Tensor, Var};
use texcoord::warp::{CoordMap, SENTINEL};

fn tiny_inpainter() -> Inpainter {
    Inpainter::new(InpainterConfig {
        widths: vec![3, 4],
        ..InpainterConfig::default()
    })
    .unwrap()
}

#[test]
fn default_inpainter_parameter_count() {
    // gated(i, o) = 2·(9·i·o + o); widths 32, 64, 128 with the last reused
    // for the third level and the two bottleneck convs.
    let gated = |i: usize, o: usize| 2 * (9 * i * o + o);
    let want = gated(3, 32)
        + gated(32, 64)
        + gated(64, 128)
        + gated(128, 128)
        + 2 * gated(128, 128)
        + gated(128, 128)
        + gated(128, 64)
        + gated(64, 32)
        + (9 * 32 * 2 + 2);
    assert_eq!(want, 1_552_258);
    let net = Inpainter::new(InpainterConfig::default()).unwrap();
    assert_eq!(count_params(&net.init_params::<f32>(0).unwrap()), want);
}

#[test]
fn gated_layer_counts() {
    let mut plain = ParamStore::<f32>::new();
    Conv::new("c", 1, 1, 3, 1, 1).register(&mut plain, &mut ChaCha8Rng::seed_from_u64(0), 1.0).unwrap();
    assert_eq!(count_params(&plain), 10);
    let mut gated = ParamStore::<f32>::new();
    GatedConv::new("g", GatedConvSpec::same(1, 1, 3, Activation::Elu))
        .register(&mut gated, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    assert_eq!(count_params(&gated), 20);
}

#[test]
fn all_unknown_input_gives_finite_complete_output() {
    let net = tiny_inpainter();
    let params = net.init_params::<f32>(9).unwrap();
    let c = CoordMap::unknown(8, 8);
    let x: Tensor<f32> = c.network_input((32, 32));
    assert!(x.data()[..128].iter().all(|&v| v == SENTINEL));
    let d = net.inpaint_coords(&params, &c, (32, 32)).unwrap();
    assert!(d.is_complete());
    assert!(d.xs().iter().chain(d.ys()).all(|v| v.is_finite()));
}

fn refiner_cfg(mode: RefinerMode) -> RefinerConfig {
    RefinerConfig {
        mode,
        target_channels: 4,
        source_channels: 3,
        widths: [3, 4, 4, 5],
        res_blocks: 1,
        ..RefinerConfig::default()
    }
}

fn refiner_inputs(g: &mut Graph<f64>, seed: u64, n: usize, h: usize, w: usize) -> (Var, Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = g.constant(Tensor::from_fn([n, 4, h, w], |_| rng.gen_range(-1.0..1.0)));
    let s = g.constant(Tensor::from_fn([n, 3, h, w], |_| rng.gen_range(0.0..1.0)));
    (t, s)
}

#[test]
fn identity_warp_matches_unwarped_skips() {
    let deform = Refiner::new(refiner_cfg(RefinerMode::Deformable)).unwrap();
    let plain = Refiner::new(refiner_cfg(RefinerMode::DualUnwarped)).unwrap();
    let params = deform.init_params::<f64>(4).unwrap();
    let warp = WarpPyramid::identity(2, 16, 8).unwrap();

    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let (target, source) = refiner_inputs(&mut g, 1, 2, 8, 16);
    let a = deform
        .forward(&mut g, &p, &RefinerInput { target, source, identity_cond: None, warp: Some(&warp) })
        .unwrap();
    let b = plain
        .forward(&mut g, &p, &RefinerInput { target, source, identity_cond: None, warp: None })
        .unwrap();
    assert!(g.value(a).max_abs_diff(g.value(b)) <= 1e-6);
}

#[test]
fn non_identity_warp_changes_output() {
    let deform = Refiner::new(refiner_cfg(RefinerMode::Deformable)).unwrap();
    let params = deform.init_params::<f64>(4).unwrap();
    let mut shifted = CoordMap::identity(16, 8);
    for j in 0..8 {
        for i in 0..16 {
            shifted.set(i, j, (i as f32 + 3.0).min(15.0), j as f32);
        }
    }
    let id = WarpPyramid::identity(1, 16, 8).unwrap();
    let sh = WarpPyramid::from_fields(&[shifted]).unwrap();
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let (target, source) = refiner_inputs(&mut g, 2, 1, 8, 16);
    let a = deform.forward(&mut g, &p, &RefinerInput { target, source, identity_cond: None, warp: Some(&id) }).unwrap();
    let b = deform.forward(&mut g, &p, &RefinerInput { target, source, identity_cond: None, warp: Some(&sh) }).unwrap();
    assert!(g.value(a).max_abs_diff(g.value(b)) > 1e-6);
}

#[test]
fn missing_warp_field_errors() {
    let deform = Refiner::new(refiner_cfg(RefinerMode::Deformable)).unwrap();
    let params = deform.init_params::<f64>(0).unwrap();
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let (target, source) = refiner_inputs(&mut g, 3, 1, 8, 8);
    let err = deform
        .forward(&mut g, &p, &RefinerInput { target, source, identity_cond: None, warp: None })
        .unwrap_err();
    assert!(err.to_string().contains("warp"));
}

#[test]
fn refiner_output_lies_in_open_unit_interval() {
    for mode in [RefinerMode::Plain, RefinerMode::Deformable, RefinerMode::DualUnwarped] {
        let net = Refiner::new(refiner_cfg(mode)).unwrap();
        let params = net.init_params::<f64>(7).unwrap();
        let warp = WarpPyramid::identity(1, 8, 8).unwrap();
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let (target, source) = refiner_inputs(&mut g, 5, 1, 8, 8);
        let y = net.forward(&mut g, &p, &RefinerInput { target, source, identity_cond: None, warp: Some(&warp) }).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn discriminator_logit_gradients() {
    let d = Discriminator::new(DiscriminatorConfig { in_channels: 4, width: 2 }).unwrap();
    let params = d.init_params::<f64>(3).unwrap();
    let names: Vec<String> = params.names().map(String::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut inputs = vec![
        Tensor::from_fn([1, 3, 16, 16], |_| rng.gen_range(0.0..1.0)),
        Tensor::from_fn([1, 1, 16, 16], |_| rng.gen_range(0.0..1.0)),
    ];
    inputs.extend(names.iter().map(|n| params.get(n).unwrap().clone()));
    let r = check(&inputs, |g, v| {
        let p = names.iter().cloned().zip(v[2..].iter().copied()).collect();
        let y = d.forward(g, &p, v[0], v[1])?;
        project(g, y, 1)
    })
    .unwrap();
    assert!(r.max_relative() <= 1e-5, "{r:?}");
}

/// Central differences of the coordinate-stage objective with respect to
/// 20 randomly chosen inpainter weights.
#[test]
fn stage1_objective_weight_gradients() {
    let net = tiny_inpainter();
    let params = net.init_params::<f64>(2).unwrap();
    let names: Vec<String> = params.names().map(String::from).collect();
    let inputs: Vec<Tensor<f64>> = names.iter().map(|n| params.get(n).unwrap().clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let extent = (12, 10);
    let mut c = CoordMap::unknown(8, 8);
    for j in 0..8 {
        for i in 0..8 {
            if rng.gen_bool(0.5) {
                c.set(i, j, rng.gen_range(0.0..11.0), rng.gen_range(0.0..9.0));
            }
        }
    }
    let x: Tensor<f64> = c.network_input(extent);
    let source = Tensor::from_fn([1, 3, 10, 12], |_| rng.gen_range(0.0..1.0));
    let targets = Stage1Targets {
        coords: c.to_tensor(),
        coords_known: c.mask_tensor(),
        color: Tensor::from_fn([1, 3, 8, 8], |_| rng.gen_range(0.0..1.0)),
        color_known: Tensor::from_fn([1, 1, 8, 8], |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }),
        extent,
    };
    let which: Vec<(usize, usize)> = (0..20)
        .map(|_| {
            let i = rng.gen_range(0..inputs.len());
            (i, rng.gen_range(0..inputs[i].numel()))
        })
        .collect();
    let r = check_elements(&inputs, &which, |g, v| {
        let p = names.iter().cloned().zip(v.iter().copied()).collect();
        let xv = g.constant(x.clone());
        let sv = g.constant(source.clone());
        let d = net.forward(g, &p, xv, extent)?;
        Ok(stage1_loss(g, d, sv, &targets, Stage1Weights::default())?.total)
    })
    .unwrap();
    assert!(r.max_elementwise <= 1e-4, "{r:?}");
}
