use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;

use texcoord::data::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use texcoord::data::dataset::{dataset_index, split_of, Split};
use texcoord::data::png::write_png;
use texcoord::data::prefetch::Prefetcher;
use texcoord::data::synth::{generate_pair, generate_views, SceneConfig};
use texcoord::data::uvm::{decode_uvm, encode_uvm, write_uvm};
use texcoord::nn::ParamStore;
use texcoord::tensor::Tensor;
use texcoord::warp::{warp_texture, ColorTexture, Image, UvMap};
use texcoord::Error;

fn image_bytes(img: &Image) -> Vec<u8> {
    img.planar().iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[test]
fn zero_rotation_views_coincide() {
    let cfg = SceneConfig {
        min_rotation_deg: 0.0,
        max_rotation_deg: 0.0,
        ..SceneConfig::default()
    };
    for seed in 0..4 {
        let p = generate_pair(seed, &cfg).unwrap();
        assert_eq!(p.source_uv, p.target_uv);
        assert_eq!(p.source, p.target);
    }
}

#[test]
fn half_turn_shows_the_mirrored_front() {
    let cfg = SceneConfig {
        source_jitter_deg: 0.0,
        ..SceneConfig::default()
    };
    let (tex, views) = generate_views(3, &cfg, &[0.0, 180.0]).unwrap();
    let (tw, th) = (tex.width(), tex.height());
    for v in 0..th {
        for u in 0..tw {
            assert_eq!(tex.get(u, v), tex.get(tw - 1 - u, v));
        }
    }
    let (front, back) = (&views[0].1, &views[1].1);
    assert!(front.raw_u().iter().zip(front.valid_mask()).all(|(&u, &ok)| !ok || u <= 0.5 + 1e-6));
    let mut mirrored = UvMap::new(back.width(), back.height());
    for y in 0..back.height() {
        for x in 0..back.width() {
            if let Some((u, v)) = back.get(x, y) {
                assert!(u >= 0.5 - 1e-6, "back view sees the hidden half");
                mirrored.set(x, y, 1.0 - u, v);
            }
        }
    }
    let a = warp_texture(&tex, back);
    let b = warp_texture(&tex, &mirrored);
    for y in 0..back.height() {
        for x in 0..back.width() {
            if back.is_valid(x, y) {
                for ch in 0..3 {
                    assert!((a.get(x, y)[ch] - b.get(x, y)[ch]).abs() <= 1e-5);
                }
            }
        }
    }
}

#[test]
fn seed_42_scene_is_pinned() {
    let p = generate_pair(42, &SceneConfig::default()).unwrap();
    let s = crc32fast::hash(&image_bytes(&p.source));
    let m = crc32fast::hash(&encode_uvm(&p.source_uv));
    assert_eq!((s, m), (0xdc0d_dff7, 0x008d_4453), "{s:#010x} {m:#010x}");
}

#[test]
fn generation_is_deterministic() {
    let cfg = SceneConfig::default();
    assert_eq!(generate_pair(7, &cfg).unwrap(), generate_pair(7, &cfg).unwrap());
    assert_ne!(generate_pair(7, &cfg).unwrap().source, generate_pair(8, &cfg).unwrap().source);
}

/// Clamped bilinear texture lookup at normalised `(u, v)`.
fn lookup(tex: &ColorTexture, u: f32, v: f32) -> [f64; 3] {
    let (tw, th) = (tex.width(), tex.height());
    let x = (u as f64 * (tw - 1) as f64).clamp(0.0, (tw - 1) as f64);
    let y = (v as f64 * (th - 1) as f64).clamp(0.0, (th - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(tw - 1), (y0 + 1).min(th - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let mut out = [0.0; 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let at = |i, j| tex.get(i, j)[ch] as f64;
        *o = (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x1, y0)) + fy * ((1.0 - fx) * at(x0, y1) + fx * at(x1, y1));
    }
    out
}

#[test]
fn rendered_pixels_agree_with_their_texture_coordinates() {
    let cfg = SceneConfig::default();
    for seed in 0..6 {
        let p = generate_pair(seed, &cfg).unwrap();
        for (img, uv) in [(&p.source, &p.source_uv), (&p.target, &p.target_uv)] {
            for y in 0..uv.height() {
                for x in 0..uv.width() {
                    if let Some((u, v)) = uv.get(x, y) {
                        let want = lookup(&p.texture, u, v);
                        for ch in 0..3 {
                            assert!((img.get(x, y)[ch] as f64 - want[ch]).abs() <= 1.0 / 255.0);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn truncated_uvm_is_reported() {
    let mut m = UvMap::new(3, 2);
    m.set(1, 1, 0.5, 0.25);
    let bytes = encode_uvm(&m);
    let err = decode_uvm(&bytes[..bytes.len() - 5]).unwrap_err();
    assert!(matches!(err, Error::Truncated));
    assert_eq!(err.to_string(), "truncated payload");
    assert!(matches!(decode_uvm(b"UVM2\0\0\0\0"), Err(Error::BadMagic { .. })));
}

fn sample_store() -> ParamStore<f32> {
    let mut s = ParamStore::new();
    s.insert("a.weight", Tensor::from_fn([2, 3, 3, 3], |i| i as f32 * 0.25 - 3.0)).unwrap();
    s.insert("a.bias", Tensor::new([2], vec![1.5, -0.0]).unwrap()).unwrap();
    s.insert("b", Tensor::new([1], vec![f32::MIN_POSITIVE]).unwrap()).unwrap();
    s
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let s = sample_store();
    let bytes = encode_checkpoint(&s);
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(encode_checkpoint(&back), bytes);
    assert_eq!(back.names().collect::<Vec<_>>(), vec!["a.weight", "a.bias", "b"]);

    let mut bad = bytes.clone();
    let k = bad.len() / 2;
    bad[k] ^= 0x01;
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Crc { .. })));
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(Error::Crc { .. } | Error::Truncated)));
    assert!(matches!(decode_checkpoint(&bytes[..10]), Err(Error::Truncated)));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    save_checkpoint(&path, &s, None).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(encode_checkpoint(&load_checkpoint(&path).unwrap()), bytes);
}

fn write_view(dir: &std::path::Path, stem: &str) {
    write_png(dir.join(format!("{stem}.png")), &Image::filled(4, 4, [0.5; 3])).unwrap();
    write_uvm(dir.join(format!("{stem}.uvm")), &UvMap::new(4, 4)).unwrap();
}

#[test]
fn dataset_pairs_every_ordered_pose_pair() {
    let dir = tempfile::tempdir().unwrap();
    assert!(dataset_index(dir.path()).unwrap().is_empty());

    write_view(dir.path(), "alice_0");
    write_view(dir.path(), "alice_1");
    let pairs = dataset_index(dir.path()).unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!((pairs[0].source.pose.as_str(), pairs[0].target.pose.as_str()), ("0", "1"));
    assert_eq!((pairs[1].source.pose.as_str(), pairs[1].target.pose.as_str()), ("1", "0"));

    for k in 2..5 {
        write_view(dir.path(), &format!("bob_{k}"));
    }
    write_view(dir.path(), "bob_extra_9");
    // an image without a UV map is ignored
    write_png(dir.path().join("carol_0.png"), &Image::filled(4, 4, [0.0; 3])).unwrap();
    let pairs = dataset_index(dir.path()).unwrap();
    let bob = pairs.iter().filter(|p| p.id == "bob").count();
    assert_eq!(bob, 3 * 2);
    assert_eq!(pairs.len(), 2 + 6);
    assert!(pairs.iter().all(|p| p.source.pose != p.target.pose));
}

#[test]
fn split_depends_only_on_the_id() {
    let ids: Vec<String> = (0..200).map(|i| format!("subject{i:04}")).collect();
    let first: Vec<Split> = ids.iter().map(|s| split_of(s)).collect();
    let again: Vec<Split> = ids.iter().rev().map(|s| split_of(s)).collect();
    assert!(first.iter().eq(again.iter().rev()));
    let held = first.iter().filter(|&&s| s == Split::Test).count();
    assert!((5..=40).contains(&held), "{held}");
}

#[test]
fn prefetcher_bounds_work_ahead_and_keeps_order() {
    for capacity in [1, 2, 4] {
        let produced = Arc::new(AtomicUsize::new(0));
        let p2 = Arc::clone(&produced);
        let mut it = Prefetcher::spawn(capacity, move |i| {
            (i < 20).then(|| {
                p2.fetch_add(1, Ordering::SeqCst);
                i
            })
        });
        let mut got = Vec::new();
        std::thread::sleep(Duration::from_millis(20));
        for consumed in 0..20 {
            let ahead = produced.load(Ordering::SeqCst) - consumed;
            assert!(ahead <= capacity, "capacity {capacity}: {ahead} ahead");
            got.push(it.next().unwrap());
            std::thread::sleep(Duration::from_millis(2));
        }
        assert_eq!(got, (0..20).collect::<Vec<_>>());
        assert_eq!(it.next(), None);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uvm_round_trip(w in 1usize..9, h in 1usize..9,
                      cells in prop::collection::vec(prop::option::of((0.0f32..=1.0, 0.0f32..=1.0)), 64)) {
        let mut m = UvMap::new(w, h);
        for y in 0..h {
            for x in 0..w {
                if let Some((u, v)) = cells[y * 8 + x] {
                    m.set(x, y, u, v);
                }
            }
        }
        let back = decode_uvm(&encode_uvm(&m)).unwrap();
        prop_assert_eq!(back, m);
    }
}
