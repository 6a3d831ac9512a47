//! Compression driver on small models: calibration, mask persistence,
//! packing round trips and determinism.

use candle_core::{DType, Device, Tensor};
use swinsit::codec::{ModelConfig, StageConfig, SwinSitCodec};
use swinsit::compression::{
    calibrate, compress, prune_model, CompressConfig, CompressedModel, FineTune,
};
use swinsit::data::{synthetic_images, ImageSet};
use swinsit::nn::{Dense, ForwardCtx, ParamStore};
use swinsit::training::{evaluate, Link, TrainConfig, Trainer, Variant};

fn small_cfg() -> TrainConfig {
    let model = ModelConfig::new(
        32,
        32,
        StageConfig {
            depths: vec![1, 1],
            channels: vec![8, 16],
            num_heads: vec![2, 2],
            window_size: 4,
            output_channels: 8,
            mlp_ratio: 2,
        },
    );
    TrainConfig {
        variant: Variant::NoCeac,
        model,
        batch_size: 16,
        learning_rate: 1e-3,
        fading_grid: 4,
        pilot_len: 16,
        ..TrainConfig::default()
    }
}

fn codec(cfg: &TrainConfig) -> SwinSitCodec {
    SwinSitCodec::new(cfg.model_config().unwrap(), DType::F32, 1).unwrap()
}

fn run_compress(cfg: &TrainConfig, codec: &SwinSitCodec, data: &ImageSet, cc: &CompressConfig) -> CompressedModel {
    let link = Link::new(codec, cfg.variant, None, cfg.pilot_len, cfg.fading_grid).unwrap();
    let mut t = Trainer::new(cfg.clone(), link, data, &ImageSet::empty(32, 32)).unwrap();
    compress(codec, cc, &mut t).unwrap()
}

fn psnr_curve(codec: &SwinSitCodec, quant: Option<&swinsit::nn::QuantRuntime>, test: &ImageSet) -> Vec<f64> {
    let link = Link::new(codec, Variant::NoCeac, None, 16, 4).unwrap();
    evaluate(&link, test, &[1.0, 13.0], &[0, 1], 8, quant)
        .unwrap()
        .rows
        .iter()
        .map(|r| r.psnr_db)
        .collect()
}

#[test]
fn one_batch_calibration_adopts_its_extremes() {
    let mut store = ParamStore::new(DType::F64, 0);
    let layer = Dense::fan_in(&mut store.root().pp("a"), 3, 2).unwrap();
    let x = Tensor::new(&[[-0.5f64, 0.25, 2.0], [0.0, 1.0, -1.5]], &Device::Cpu).unwrap();
    let states = calibrate(1, 0.3, None, |_, ctx| {
        layer.forward(&x, ctx)?;
        Ok(())
    })
    .unwrap();
    let s = states[layer.name()];
    assert_eq!((s.a_min, s.a_max), (-1.5, 2.0));
}

#[test]
fn full_tracking_of_a_widening_stream_is_monotone() {
    let mut store = ParamStore::new(DType::F64, 0);
    let layer = Dense::fan_in(&mut store.root().pp("a"), 2, 2).unwrap();
    let mut prev = (f64::INFINITY, f64::NEG_INFINITY);
    for n in 1..6 {
        let states = calibrate(n, 1.0, None, |i, ctx| {
            let w = (i + 1) as f64;
            let x = Tensor::new(&[[-w, w]], &Device::Cpu)?;
            layer.forward(&x, ctx)?;
            Ok(())
        })
        .unwrap();
        let s = states[layer.name()];
        assert!(s.a_min <= prev.0 && s.a_max >= prev.1);
        assert_eq!((s.a_min, s.a_max), (-(n as f64), n as f64));
        prev = (s.a_min, s.a_max);
    }
}

#[test]
fn layers_are_calibrated_independently() {
    let mut store = ParamStore::new(DType::F64, 0);
    let a = Dense::fan_in(&mut store.root().pp("a"), 2, 2).unwrap();
    let b = Dense::fan_in(&mut store.root().pp("b"), 2, 2).unwrap();
    let xa = Tensor::new(&[[0.1f64, 0.7]], &Device::Cpu).unwrap();
    let run = |scale: f64| {
        calibrate(3, 0.5, None, |i, ctx| {
            a.forward(&xa, ctx)?;
            let xb = Tensor::new(&[[-scale * (i + 1) as f64, 0.2]], &Device::Cpu)?;
            b.forward(&xb, ctx)?;
            Ok(())
        })
        .unwrap()
    };
    let (s1, s2) = (run(1.0), run(40.0));
    assert_eq!(s1[a.name()], s2[a.name()]);
    assert_ne!(s1[b.name()], s2[b.name()]);
}

#[test]
fn masks_persist_and_packed_model_round_trips() {
    let cfg = small_cfg();
    let data = synthetic_images(48, 3);
    let test = synthetic_images(6, 4);
    let codec = codec(&cfg);
    let cc = CompressConfig {
        sparsity: 0.6,
        bits: 8,
        beta: 0.1,
        calib_batches: 2,
        prune_steps: 3,
        quant_steps: 3,
    };
    let model = run_compress(&cfg, &codec, &data, &cc);

    // every pruned position is still exactly zero after both fine-tunes
    let reference = prune_model(&codec.store, 0.0).unwrap();
    let mut zeros = 0;
    for (name, t) in &model.dense {
        let w = codec.store.values_f64(name).unwrap();
        for (v, keep) in w.iter().zip(&t.mask) {
            if !keep {
                assert_eq!(*v, 0.0, "{name}");
                zeros += 1;
            }
        }
    }
    let stats = model.stats();
    assert_eq!(zeros, stats.pruned_params);
    assert_eq!(stats.pruned_params + stats.remaining_params, stats.total_params);
    assert_eq!(reference.covered(), stats.prunable_params);
    let expected = (0.6 * stats.prunable_params as f64).floor() as usize;
    assert!(stats.pruned_params >= expected, "{} < {expected}", stats.pruned_params);
    for t in model.dense.values() {
        let max = (1u64 << 8) - 1;
        assert!(t.quant.codes.iter().all(|&c| (c as u64) <= max));
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.safetensors");
    model.save(&path).unwrap();
    let back = CompressedModel::load(&path).unwrap();
    assert_eq!(back.dense, model.dense);
    assert_eq!(back.float, model.float);
    assert_eq!(back.activations, model.activations);
    let (c1, q1) = model.to_codec(DType::F32).unwrap();
    let (c2, q2) = back.to_codec(DType::F32).unwrap();
    assert_eq!(psnr_curve(&c1, Some(&q1), &test), psnr_curve(&c2, Some(&q2), &test));
}

#[test]
fn zero_sparsity_at_32_bits_is_a_passthrough() {
    let cfg = small_cfg();
    let data = synthetic_images(32, 5);
    let test = synthetic_images(6, 6);
    let codec = codec(&cfg);
    let before = psnr_curve(&codec, None, &test);
    let cc = CompressConfig {
        sparsity: 0.0,
        bits: 32,
        beta: 0.1,
        calib_batches: 2,
        prune_steps: 0,
        quant_steps: 0,
    };
    let model = run_compress(&cfg, &codec, &data, &cc);
    assert_eq!(model.stats().pruned_params, 0);
    let (c, q) = model.to_codec(DType::F32).unwrap();
    let after = psnr_curve(&c, Some(&q), &test);
    for (a, b) in before.iter().zip(&after) {
        assert!((a - b).abs() < 1e-3, "{before:?} vs {after:?}");
    }
}

#[test]
fn compression_is_deterministic() {
    let cfg = small_cfg();
    let data = synthetic_images(32, 7);
    let cc = CompressConfig {
        sparsity: 0.5,
        bits: 6,
        beta: 0.2,
        calib_batches: 2,
        prune_steps: 2,
        quant_steps: 2,
    };
    let a = run_compress(&cfg, &codec(&cfg), &data, &cc);
    let b = run_compress(&cfg, &codec(&cfg), &data, &cc);
    assert_eq!(a.dense, b.dense);
    assert_eq!(a.float, b.float);
    assert_eq!(a.activations, b.activations);
}

#[test]
fn fine_tune_rejects_a_foreign_codec() {
    let cfg = small_cfg();
    let data = synthetic_images(16, 8);
    let mine = codec(&cfg);
    let other = codec(&cfg);
    let masks = prune_model(&other.store, 0.5).unwrap();
    let link = Link::new(&mine, cfg.variant, None, cfg.pilot_len, cfg.fading_grid).unwrap();
    let mut t = Trainer::new(cfg, link, &data, &ImageSet::empty(32, 32)).unwrap();
    assert!(t.fine_tune(&other, &masks, None, 1).is_err());
    let ctx = ForwardCtx::eval();
    assert!(t.calibration_pass(&other, 0, &ctx).is_err());
}
