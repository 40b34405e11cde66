use lumendet::arch::blocks::{AreaAttention, C2f, Ctx, Init};
use lumendet::arch::{FeaturePyramid, Model, ModelConfig, Variant, STRIDES};
use lumendet::tensor::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(size: usize, batch: usize, seed: u64) -> Tensor {
    Tensor::uniform(&[batch, 3, size, size], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn v12() -> ModelConfig {
    ModelConfig::default().with_variant(Variant::V12)
}

#[test]
fn pyramid_strides_and_cells() {
    let cfg = ModelConfig {
        base_channels: 16,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg, 0).unwrap();
    let mut tape = Tape::new();
    let x = tape.leaf(image(160, 1, 0));
    let mut ctx = Ctx::new(&mut tape, model.store(), false);
    let p = model.backbone_forward(&mut ctx, x).unwrap();
    for (v, side) in p.levels().into_iter().zip([20, 10, 5]) {
        assert_eq!(&tape.shape(v)[2..], &[side, side]);
    }
    let raw = model.predict(image(160, 1, 0)).unwrap();
    assert_eq!(raw.cells_per_image(), 525);
    for (l, (&s, side)) in raw.levels.iter().zip(STRIDES.iter().zip([20, 10, 5])) {
        assert_eq!(l.stride, s);
        assert_eq!(l.boxes.shape(), &[1, 4, side, side]);
        assert_eq!(l.obj.shape(), &[1, 1, side, side]);
        assert_eq!(l.cls.shape(), &[1, 1, side, side]);
    }
}

#[test]
fn rejects_sizes_off_the_stride_grid() {
    let model = Model::new(ModelConfig::default(), 0).unwrap();
    assert!(model.predict(image(100, 1, 0)).is_err());
    assert!(model.predict(Tensor::zeros(&[1, 3, 64, 96])).is_err());
}

#[test]
fn v12_without_attention_is_bitwise_v8() {
    for seed in [0, 5] {
        let with = Model::new(v12(), seed).unwrap();
        let stripped = with.without_attention().unwrap();
        let v8 = Model::new(ModelConfig::default().with_variant(Variant::V8), seed).unwrap();
        assert_eq!(stripped.config(), v8.config());
        let x = image(96, 2, seed);
        let (a, b) = (stripped.predict(x.clone()).unwrap(), v8.predict(x.clone()).unwrap());
        for (la, lb) in a.levels.iter().zip(&b.levels) {
            assert_eq!(la.boxes.data(), lb.boxes.data());
            assert_eq!(la.obj.data(), lb.obj.data());
            assert_eq!(la.cls.data(), lb.cls.data());
        }
        let full = with.predict(x).unwrap();
        assert_ne!(full.levels[2].obj.data(), b.levels[2].obj.data());
    }
}

#[test]
fn variants_share_shapes_but_not_sizes() {
    let a = Model::new(ModelConfig::default(), 1).unwrap();
    let b = Model::new(v12(), 1).unwrap();
    assert!(b.num_params() > a.num_params());
    assert!(a.num_params() <= 500_000 && b.num_params() <= 500_000);
    let (ra, rb) = (a.predict(image(64, 1, 1)).unwrap(), b.predict(image(64, 1, 1)).unwrap());
    for (x, y) in ra.levels.iter().zip(&rb.levels) {
        assert_eq!(x.boxes.shape(), y.boxes.shape());
    }
}

#[test]
fn cls_branch_does_not_touch_boxes() {
    let mut model = Model::new(v12(), 2).unwrap();
    let x = image(64, 1, 2);
    let before = model.predict(x.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for id in model.cls_branch_params() {
        for v in model.store_mut().get_mut(id).data_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
    let after = model.predict(x).unwrap();
    for (a, b) in before.levels.iter().zip(&after.levels) {
        assert_eq!(a.boxes.data(), b.boxes.data());
        assert_ne!(a.cls.data(), b.cls.data());
    }
}

#[test]
fn batch_rows_match_single_images_bitwise() {
    let model = Model::new(v12(), 3).unwrap();
    let batch = image(64, 3, 3);
    let all = model.predict(batch.clone()).unwrap();
    let per = 3 * 64 * 64;
    for i in 0..3 {
        let one = Tensor::new(vec![1, 3, 64, 64], batch.data()[i * per..(i + 1) * per].to_vec()).unwrap();
        let single = model.predict(one).unwrap();
        for (a, b) in all.levels.iter().zip(&single.levels) {
            let n = b.obj.numel();
            assert_eq!(&a.obj.data()[i * n..(i + 1) * n], b.obj.data());
        }
    }
}

#[test]
fn every_parameter_gets_a_finite_nonzero_gradient() {
    for variant in [Variant::V8, Variant::V12] {
        let mut model = Model::new(ModelConfig::default().with_variant(variant), 4).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(image(64, 2, 4));
        let out = model.forward(&mut tape, x, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut loss = None;
        for l in &out.levels {
            for v in [l.boxes, l.obj, l.cls] {
                let w = Tensor::uniform(tape.shape(v), -1.0, 1.0, &mut rng);
                let w = tape.leaf(w);
                let p = tape.mul(v, w).unwrap();
                let s = tape.sum(p);
                loss = Some(match loss {
                    None => s,
                    Some(t) => tape.add(t, s).unwrap(),
                });
            }
        }
        tape.backward(loss.unwrap(), model.store_mut()).unwrap();
        let store = model.store();
        for id in store.trainable_ids() {
            let g = store.get(id).grad.as_ref().expect("grad buffer");
            assert!(g.iter().all(|v| v.is_finite()), "{}", store.name(id));
            assert!(g.iter().any(|&v| v != 0.0), "{} has zero gradient", store.name(id));
        }
    }
}

#[test]
fn c2f_reaches_every_bottleneck() {
    let mut store = ParamStore::new();
    let block = C2f::new(&mut Init { store: &mut store, seed: 9 }, "c2f", 8, 8, 3).unwrap();
    let mut tape = Tape::new();
    let x = tape.leaf(image(8, 1, 9).reshape(&[1, 3, 8, 8]).unwrap());
    let x8 = tape.concat(&[x, x, x], 1).unwrap();
    let x8 = tape.slice(x8, 1, 0, 8).unwrap();
    let mut ctx = Ctx::new(&mut tape, &store, true);
    let y = block.forward(&mut ctx, x8).unwrap();
    assert_eq!(tape.shape(y), &[1, 8, 8, 8]);
    let w = tape.leaf(Tensor::uniform(&[1, 8, 8, 8], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(9)));
    let p = tape.mul(y, w).unwrap();
    let loss = tape.sum(p);
    tape.backward(loss, &mut store).unwrap();
    let names: Vec<String> = store.trainable_ids().map(|id| store.name(id).to_string()).collect();
    assert!(names.iter().filter(|n| n.contains(".m")).count() >= 3 * 2);
    for id in store.trainable_ids() {
        let g = store.get(id).grad.as_ref().unwrap();
        assert!(g.iter().any(|&v| v != 0.0), "{} is dead", store.name(id));
    }
}

#[test]
fn zero_query_and_key_give_band_means() {
    let mut store = ParamStore::new();
    let (c, h, w, areas) = (4, 4, 3, 2);
    let attn = AreaAttention::new(&mut Init { store: &mut store, seed: 1 }, "a", c, areas, 2);
    for id in [attn.q.weight, attn.q.bias, attn.k.weight, attn.k.bias] {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let x = Tensor::uniform(&[1, c, h, w], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let mut ctx = Ctx::new(&mut tape, &store, false);
    let y = attn.forward(&mut ctx, xv).unwrap();
    let out = tape.value(y);
    let (vw, vb) = (store.get(attn.v.weight).data(), store.get(attn.v.bias).data());
    let v = |o: usize, i: usize, j: usize| -> f64 {
        vb[o] as f64 + (0..c).map(|ci| vw[o * c + ci] as f64 * x.at(&[0, ci, i, j]) as f64).sum::<f64>()
    };
    let band = h / areas;
    for o in 0..c {
        for i in 0..h {
            let rows = (i / band) * band..(i / band + 1) * band;
            let mean = rows.flat_map(|r| (0..w).map(move |j| (r, j))).map(|(r, j)| v(o, r, j)).sum::<f64>() / (band * w) as f64;
            for j in 0..w {
                let want = x.at(&[0, o, i, j]) as f64 + mean;
                assert!((out.at(&[0, o, i, j]) as f64 - want).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn neck_mixes_levels_both_ways() {
    let mut model = Model::new(ModelConfig::default(), 6).unwrap();
    let [c3, c4, c5] = model.config().pyramid_channels();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p3 = Tensor::uniform(&[1, c3, 8, 8], -1.0, 1.0, &mut rng);
    let p4 = Tensor::uniform(&[1, c4, 4, 4], -1.0, 1.0, &mut rng);

    let mut tape = Tape::new();
    let p = FeaturePyramid {
        p3: tape.leaf(p3.clone()),
        p4: tape.leaf(p4.clone()),
        p5: tape.leaf(Tensor::zeros(&[1, c5, 2, 2])),
    };
    let mut ctx = Ctx::new(&mut tape, model.store(), false);
    let n = model.neck_forward(&mut ctx, p).unwrap();
    assert!(tape.value(n.p3).data().iter().any(|&v| v != 0.0));
    for (a, b) in n.levels().into_iter().zip(p.levels()) {
        assert_eq!(tape.shape(a), tape.shape(b));
    }

    let mut tape = Tape::new();
    let p = FeaturePyramid {
        p3: tape.leaf(p3),
        p4: tape.leaf(p4),
        p5: tape.leaf(Tensor::uniform(&[1, c5, 2, 2], -1.0, 1.0, &mut rng)),
    };
    let mut ctx = Ctx::new(&mut tape, model.store(), true);
    let n = model.neck_forward(&mut ctx, p).unwrap();
    let loss = tape.sum(n.p5);
    let loss = tape.mul(loss, loss).unwrap();
    tape.backward(loss, model.store_mut()).unwrap();
    let store = model.store();
    let id = store.id_of("neck.td3.cv1.conv.weight").expect("td3 weight name");
    assert!(store.get(id).grad.as_ref().unwrap().iter().any(|&g| g != 0.0));
}

#[test]
fn outputs_are_finite_for_unit_inputs() {
    let model = Model::new(v12(), 8).unwrap();
    for fill in [0.0, 1.0] {
        let raw = model.predict(Tensor::full(&[1, 3, 64, 64], fill)).unwrap();
        assert!(raw.levels.iter().all(|l| l.boxes.all_finite() && l.obj.all_finite() && l.cls.all_finite()));
    }
}
