use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use texcoord::data::synth::{generate_pair, SceneConfig};
use texcoord::tensor::{Graph, Tensor};
use texcoord::warp::{
    downsample_warpfield, splat_colors, splat_coordinates, texture_from_coords, warp_to_target, ColorTexture,
    CoordMap, Image, UvMap, SPLAT_EPS,
};

fn random_uv(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> UvMap {
    let mut m = UvMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if rng.gen_bool(density) {
                m.set(x, y, rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
            }
        }
    }
    m
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    Image::from_planar(w, h, (0..3 * w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

/// Scatter formulation: every valid pixel adds `value·w` and `w` to the
/// four texels around its texture position.
fn scatter_oracle(map: &UvMap, values: &[Vec<f64>], tw: usize, th: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut acc = vec![vec![0.0; tw * th]; values.len()];
    let mut wsum = vec![0.0; tw * th];
    for y in 0..map.height() {
        for x in 0..map.width() {
            let Some((u, v)) = map.get(x, y) else { continue };
            let tx = u as f64 * (tw - 1) as f64;
            let ty = v as f64 * (th - 1) as f64;
            let (x0, y0) = (tx.floor(), ty.floor());
            let (fx, fy) = (tx - x0, ty - y0);
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                    let (i, j) = (x0 as usize + dx, y0 as usize + dy);
                    if i >= tw || j >= th {
                        continue;
                    }
                    let k = j * tw + i;
                    let w = wx * wy;
                    wsum[k] += w;
                    for (c, plane) in values.iter().enumerate() {
                        acc[c][k] += w * plane[y * map.width() + x];
                    }
                }
            }
        }
    }
    let known: Vec<bool> = wsum.iter().map(|&w| w > SPLAT_EPS).collect();
    for plane in &mut acc {
        for k in 0..tw * th {
            plane[k] = if known[k] { plane[k] / wsum[k] } else { 0.0 };
        }
    }
    (acc, known)
}

/// Clamped bilinear lookup of one channel plane.
fn bilinear(plane: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |i: usize, j: usize| plane[j * w + i];
    (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x1, y0)) + fy * ((1.0 - fx) * at(x0, y1) + fx * at(x1, y1))
}

#[test]
fn single_pixel_on_integer_texel() {
    let mut m = UvMap::new(6, 6);
    // Texel (1, 2) of a 5×5 texture sits at u = 1/4, v = 2/4.
    m.set(3, 4, 0.25, 0.5);
    let c = splat_coordinates(&m, 5, 5).unwrap();
    for j in 0..5 {
        for i in 0..5 {
            match (i, j) {
                (1, 2) => assert_eq!(c.get(i, j), Some((3.0, 4.0))),
                _ => {
                    assert_eq!(c.get(i, j), None);
                    assert_eq!(c.xs()[j * 5 + i], -10.0);
                    assert_eq!(c.ys()[j * 5 + i], -10.0);
                }
            }
        }
    }
}

#[test]
fn midway_pixel_fills_both_texels() {
    let mut m = UvMap::new(6, 6);
    m.set(3, 4, 0.375, 0.5);
    let c = splat_coordinates(&m, 5, 5).unwrap();
    assert_eq!(c.get(1, 2), Some((3.0, 4.0)));
    assert_eq!(c.get(2, 2), Some((3.0, 4.0)));
    assert_eq!(c.known_count(), 2);
}

#[test]
fn splats_match_scatter_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = random_uv(&mut rng, 8, 8, 0.7);
    let img = random_image(&mut rng, 8, 8);
    let (tw, th) = (6, 5);
    let xs: Vec<f64> = (0..64).map(|i| (i % 8) as f64).collect();
    let ys: Vec<f64> = (0..64).map(|i| (i / 8) as f64).collect();
    let (want, known) = scatter_oracle(&m, &[xs, ys], tw, th);
    let c = splat_coordinates(&m, tw, th).unwrap();
    assert_eq!(c.known(), known.as_slice());
    for k in 0..tw * th {
        if known[k] {
            assert!((c.xs()[k] as f64 - want[0][k]).abs() <= 1e-6 * want[0][k].abs().max(1.0));
            assert!((c.ys()[k] as f64 - want[1][k]).abs() <= 1e-6 * want[1][k].abs().max(1.0));
        }
    }

    let planes: Vec<Vec<f64>> = (0..3)
        .map(|ch| img.planar()[ch * 64..(ch + 1) * 64].iter().map(|&v| v as f64).collect())
        .collect();
    let (want, known) = scatter_oracle(&m, &planes, tw, th);
    let (t, k2) = splat_colors(&img, &m, tw, th).unwrap();
    assert_eq!(k2, known);
    for ch in 0..3 {
        for k in 0..tw * th {
            if known[k] {
                assert!((t.planar()[ch * tw * th + k] as f64 - want[ch][k]).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn empty_map_gives_all_unknown() {
    let c = splat_coordinates(&UvMap::new(4, 4), 3, 3).unwrap();
    assert_eq!(c.known_count(), 0);
}

#[test]
fn sample_hand_values() {
    let mut g = Graph::<f64>::new();
    let src = g.constant(Tensor::new([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
    let at = g.constant(Tensor::new([1, 2, 1, 2], vec![1.0, 0.5, 0.0, 0.5]).unwrap());
    let s = g.grid_sample(src, at).unwrap();
    assert_eq!(g.value(s).data(), &[1.0, 1.5]);
}

#[test]
fn texture_lookup_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let img = random_image(&mut rng, 9, 7);
    let (tw, th) = (5, 6);
    let xs: Vec<f32> = (0..tw * th).map(|_| rng.gen_range(-1.0..10.0)).collect();
    let ys: Vec<f32> = (0..tw * th).map(|_| rng.gen_range(-1.0..8.0)).collect();
    let d = CoordMap::from_parts(tw, th, xs.clone(), ys.clone(), vec![true; tw * th]).unwrap();
    let t = texture_from_coords(&img, &d).unwrap();
    for ch in 0..3 {
        let plane: Vec<f64> = img.planar()[ch * 63..(ch + 1) * 63].iter().map(|&v| v as f64).collect();
        for k in 0..tw * th {
            let want = bilinear(&plane, 9, 7, xs[k] as f64, ys[k] as f64);
            assert!((t.planar()[ch * tw * th + k] as f64 - want).abs() <= 1e-6);
        }
    }
}

#[test]
fn constant_coordinates_give_uniform_texture() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let img = random_image(&mut rng, 6, 6);
    let d = CoordMap::from_parts(4, 4, vec![2.0; 16], vec![3.0; 16], vec![true; 16]).unwrap();
    let t = texture_from_coords(&img, &d).unwrap();
    let px = img.get(2, 3);
    for v in 0..4 {
        for u in 0..4 {
            assert_eq!(t.get(u, v), px);
        }
    }
}

#[test]
fn incomplete_coordinates_are_rejected() {
    let img = Image::filled(4, 4, [0.5; 3]);
    assert!(texture_from_coords(&img, &CoordMap::unknown(2, 2)).is_err());
}

#[test]
fn invalid_target_gives_empty_warp() {
    let tex = ColorTexture::from_planar(2, 2, vec![0.7; 12]).unwrap();
    let d = CoordMap::identity(2, 2);
    let w = warp_to_target(&tex, &d, &UvMap::new(5, 4)).unwrap();
    assert!(w.color.planar().iter().all(|&v| v == 0.0));
    assert_eq!(w.coords.known_count(), 0);
}

#[test]
fn single_texel_texture_warps_to_constant() {
    let tex = ColorTexture::from_planar(1, 1, vec![0.1, 0.2, 0.3]).unwrap();
    let d = CoordMap::from_parts(1, 1, vec![1.0], vec![2.0], vec![true]).unwrap();
    let mut m = UvMap::new(4, 4);
    for y in 0..4 {
        for x in 0..4 {
            m.set(x, y, 0.3, 0.9);
        }
    }
    let w = warp_to_target(&tex, &d, &m).unwrap();
    for y in 0..4 {
        for x in 0..4 {
            assert_eq!(w.color.get(x, y), [0.1, 0.2, 0.3]);
            assert_eq!(w.coords.get(x, y), Some((1.0, 2.0)));
        }
    }
}

#[test]
fn identity_field_halves_to_identity() {
    let e = CoordMap::identity(8, 6);
    let d = downsample_warpfield(&e, 2).unwrap();
    for j in 0..3 {
        for i in 0..4 {
            assert_eq!(d.get(i, j), Some((i as f32, j as f32)));
        }
    }
    assert!(downsample_warpfield(&e, 4).is_err());
}

#[test]
fn downsample_matches_block_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (w, h) = (16, 8);
    for factor in [2, 4, 8] {
        let xs: Vec<f32> = (0..w * h).map(|_| rng.gen_range(0.0..15.0)).collect();
        let ys: Vec<f32> = (0..w * h).map(|_| rng.gen_range(0.0..7.0)).collect();
        let known: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.3)).collect();
        let e = CoordMap::from_parts(w, h, xs.clone(), ys.clone(), known.clone()).unwrap();
        let d = downsample_warpfield(&e, factor).unwrap();
        for bj in 0..h / factor {
            for bi in 0..w / factor {
                let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
                for j in bj * factor..(bj + 1) * factor {
                    for i in bi * factor..(bi + 1) * factor {
                        if known[j * w + i] {
                            sx += xs[j * w + i] as f64;
                            sy += ys[j * w + i] as f64;
                            n += 1;
                        }
                    }
                }
                let off = 0.5 * (factor as f64 - 1.0);
                match d.get(bi, bj) {
                    None => assert_eq!(n, 0),
                    Some((x, y)) => {
                        assert!(n > 0);
                        let ex = (sx / n as f64 - off) / factor as f64;
                        let ey = (sy / n as f64 - off) / factor as f64;
                        assert!((x as f64 - ex).abs() < 1e-5 && (y as f64 - ey).abs() < 1e-5);
                    }
                }
            }
        }
    }
}

/// Texels are denser than pixels here so that the splat is lossless.
#[test]
fn identity_pose_round_trip_on_scenes() {
    let cfg = SceneConfig {
        min_rotation_deg: 0.0,
        max_rotation_deg: 0.0,
        texture_width: 256,
        texture_height: 256,
        ..SceneConfig::default()
    };
    for seed in 0..20 {
        let p = generate_pair(seed, &cfg).unwrap();
        let (tw, th) = (cfg.texture_width, cfg.texture_height);
        let c = splat_coordinates(&p.source_uv, tw, th).unwrap();
        let filled = CoordMap::from_parts(
            tw,
            th,
            c.known().iter().zip(c.xs()).map(|(&k, &x)| if k { x } else { 0.0 }).collect(),
            c.known().iter().zip(c.ys()).map(|(&k, &y)| if k { y } else { 0.0 }).collect(),
            vec![true; tw * th],
        )
        .unwrap();
        let t = texture_from_coords(&p.source, &filled).unwrap();
        let w = warp_to_target(&t, &filled, &p.target_uv).unwrap();
        let (mut err, mut n) = (0.0f64, 0usize);
        for y in 0..p.source.height() {
            for x in 0..p.source.width() {
                if p.target_uv.is_valid(x, y) {
                    let (a, b) = (w.color.get(x, y), p.source.get(x, y));
                    err += (0..3).map(|ch| (a[ch] - b[ch]).abs() as f64).sum::<f64>();
                    n += 3;
                }
            }
        }
        assert!(err / n as f64 <= 2.0 / 255.0, "seed {seed}: {}", err / n as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn splatting_a_constant_gives_the_constant(seed in any::<u64>(), rgb in prop::array::uniform3(0.0f32..1.0),
                                               tw in 2usize..9, th in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_uv(&mut rng, 7, 6, 0.5);
        let (t, known) = splat_colors(&Image::filled(7, 6, rgb), &m, tw, th).unwrap();
        for k in 0..tw * th {
            if known[k] {
                for ch in 0..3 {
                    prop_assert!((t.planar()[ch * tw * th + k] - rgb[ch]).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn one_pixel_splats_its_position(x in 0usize..6, y in 0usize..6, u in 0.0f32..=1.0, v in 0.0f32..=1.0) {
        let mut m = UvMap::new(6, 6);
        m.set(x, y, u, v);
        let c = splat_coordinates(&m, 7, 5).unwrap();
        prop_assert!(c.known_count() >= 1);
        for k in 0..35 {
            if c.known()[k] {
                prop_assert!((c.xs()[k] - x as f32).abs() <= 1e-5);
                prop_assert!((c.ys()[k] - y as f32).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn sampling_a_constant_anywhere(value in -5.0f64..5.0, pts in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 1..12)) {
        let mut g = Graph::<f64>::new();
        let src = g.constant(Tensor::full([1, 2, 5, 4], value));
        let n = pts.len();
        let mut data: Vec<f64> = pts.iter().map(|p| p.0).collect();
        data.extend(pts.iter().map(|p| p.1));
        let at = g.constant(Tensor::new([1, 2, 1, n], data).unwrap());
        let s = g.grid_sample(src, at).unwrap();
        for &o in g.value(s).data() {
            prop_assert!((o - value).abs() <= 1e-12 * value.abs().max(1.0));
        }
    }

    #[test]
    fn integer_grid_sampling_is_exact(seed in any::<u64>(), w in 1usize..7, h in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = Tensor::<f64>::from_fn([1, 2, h, w], |_| rng.gen_range(-1.0..1.0));
        let pick: Vec<(usize, usize)> = (0..10).map(|_| (rng.gen_range(0..w), rng.gen_range(0..h))).collect();
        let mut data: Vec<f64> = pick.iter().map(|p| p.0 as f64).collect();
        data.extend(pick.iter().map(|p| p.1 as f64));
        let mut g = Graph::new();
        let sv = g.constant(src.clone());
        let at = g.constant(Tensor::new([1, 2, 1, 10], data).unwrap());
        let s = g.grid_sample(sv, at).unwrap();
        for ch in 0..2 {
            for (k, &(x, y)) in pick.iter().enumerate() {
                prop_assert_eq!(g.value(s).data()[ch * 10 + k], src.data()[(ch * h + y) * w + x]);
            }
        }
    }

    /// The source gradient of sampling is the output gradient splatted back
    /// with the same bilinear weights.
    #[test]
    fn sampling_backward_is_splatting(seed in any::<u64>(), w in 2usize..7, h in 2usize..7, m in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = Tensor::<f64>::from_fn([1, 1, h, w], |_| rng.gen_range(-1.0..1.0));
        let pts: Vec<(f64, f64)> = (0..m)
            .map(|_| (rng.gen_range(0.0..(w - 1) as f64), rng.gen_range(0.0..(h - 1) as f64)))
            .collect();
        let upstream: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut data: Vec<f64> = pts.iter().map(|p| p.0).collect();
        data.extend(pts.iter().map(|p| p.1));
        let mut g = Graph::new();
        let sv = g.param(src.clone());
        let at = g.constant(Tensor::new([1, 2, 1, m], data).unwrap());
        let s = g.grid_sample(sv, at).unwrap();
        g.backward_with(s, Tensor::new([1, 1, 1, m], upstream.clone()).unwrap()).unwrap();
        let grad = g.grad(sv).unwrap();

        let mut want = vec![0.0; w * h];
        for (&(x, y), &gy) in pts.iter().zip(&upstream) {
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            want[y0 * w + x0] += gy * (1.0 - fx) * (1.0 - fy);
            want[y0 * w + x1] += gy * fx * (1.0 - fy);
            want[y1 * w + x0] += gy * (1.0 - fx) * fy;
            want[y1 * w + x1] += gy * fx * fy;
        }
        for k in 0..w * h {
            prop_assert!((grad.data()[k] - want[k]).abs() <= 1e-12);
        }
        // <sample(S), G> = <S, splat(G)>
        let lhs: f64 = g.value(s).data().iter().zip(&upstream).map(|(a, b)| a * b).sum();
        let rhs: f64 = src.data().iter().zip(&want).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }
}
