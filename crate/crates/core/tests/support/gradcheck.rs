//! Autograd against central finite differences in f64 on tiny models.

use candle_core::{DType, Device, Tensor};
use swinsit::ceac::{DnCnnConfig, Denoiser};
use swinsit::codec::{ModelConfig, SemanticMap, StageConfig, SwinSitCodec};
use swinsit::nn::{ForwardCtx, ParamKind, ParamStore};
use swinsit::snr::{snr_tensor, SnrModule};

const EPS: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-3;

fn wave(n: usize, k: f64) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 + 1.0) * k).sin()).collect()
}

/// Zero-initialized biases put ReLUs of dead units exactly on their kink,
/// where the two one-sided derivatives differ; move them off it.
fn jitter_biases(store: &ParamStore) {
    let names: Vec<String> = store
        .iter()
        .filter(|(_, p)| p.kind == ParamKind::Bias)
        .map(|(n, _)| n.clone())
        .collect();
    for (j, name) in names.iter().enumerate() {
        let v: Vec<f64> = store
            .values_f64(name)
            .unwrap()
            .iter()
            .zip(wave(store.get(name).unwrap().var.elem_count(), 0.43 + 0.01 * j as f64))
            .map(|(b, w)| b + 0.05 * w)
            .collect();
        store.set_values_f64(name, &v).unwrap();
    }
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub mismatches: Vec<String>,
}

/// Compare `d loss / d param` for a spread of entries in every trainable
/// tensor of `store`.
fn check_store<F>(store: &ParamStore, loss: F) -> GradReport
where
    F: Fn() -> Tensor,
{
    let l = loss();
    let grads = l.backward().unwrap();
    // rounding error of the central difference itself
    let fd_noise = 4.0 * f64::EPSILON * l.to_scalar::<f64>().unwrap().abs().max(1.0) / EPS;
    let mut report = GradReport::default();
    for (name, p) in store.iter() {
        if p.kind == ParamKind::Buffer {
            continue;
        }
        let g = match grads.get(p.var.as_tensor()) {
            Some(g) => g.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            None => vec![0.0; p.var.elem_count()],
        };
        let base = store.values_f64(name).unwrap();
        let n = base.len();
        let picks: Vec<usize> = [0, n / 3, n / 2, n - 1].into_iter().collect();
        for &i in &picks {
            let mut v = base.clone();
            v[i] = base[i] + EPS;
            store.set_values_f64(name, &v).unwrap();
            let up = loss().to_scalar::<f64>().unwrap();
            v[i] = base[i] - EPS;
            store.set_values_f64(name, &v).unwrap();
            let down = loss().to_scalar::<f64>().unwrap();
            store.set_values_f64(name, &base).unwrap();
            let fd = (up - down) / (2.0 * EPS);
            let ad = g[i];
            let scale = ad.abs().max(fd.abs());
            if (ad - fd).abs() > REL_TOL * scale + fd_noise {
                report.mismatches.push(format!("{name}[{i}]: autograd {ad:e} vs finite difference {fd:e}"));
            }
            report.checked += 1;
        }
    }
    report
}

fn tiny_codec() -> SwinSitCodec {
    let cfg = ModelConfig::new(
        8,
        8,
        StageConfig {
            depths: vec![2, 1],
            channels: vec![4, 8],
            num_heads: vec![2, 2],
            window_size: 2,
            output_channels: 4,
            mlp_ratio: 2,
        },
    );
    SwinSitCodec::new(cfg, DType::F64, 5).unwrap()
}

pub fn codec() -> GradReport {
    let codec = tiny_codec();
    jitter_biases(&codec.store);
    let img: Vec<f64> = wave(2 * 8 * 8 * 3, 0.37).iter().map(|v| 0.5 + 0.4 * v).collect();
    let x = Tensor::from_vec(img, (2, 8, 8, 3), &Device::Cpu).unwrap();
    let noise = Tensor::from_vec(wave(2 * 8 * 2, 0.91), (2, 8, 2), &Device::Cpu)
        .unwrap()
        .affine(0.1, 0.0)
        .unwrap();
    let loss = || {
        let ctx = ForwardCtx::train();
        let y = codec.encode(&x, &[3.0, 11.0], &ctx).unwrap();
        let r = swinsit::codec::ComplexSymbols::new((&y.data + &noise).unwrap()).unwrap();
        let xh = codec.decode(&r, &[3.0, 11.0], &ctx).unwrap();
        (xh - &x).unwrap().sqr().unwrap().mean_all().unwrap()
    };
    check_store(&codec.store, loss)
}

pub fn snr_module() -> GradReport {
    let mut store = ParamStore::new(DType::F64, 9);
    let module = SnrModule::new(&mut store.root().pp("snr"), 6, 2, (1.0, 13.0)).unwrap();
    let tokens = Tensor::from_vec(wave(3 * 4 * 6, 0.53), (3, 4, 6), &Device::Cpu).unwrap();
    let map = SemanticMap::new(tokens, (2, 2)).unwrap();
    let snr = snr_tensor(&[1.0, 6.5, 13.0], 3, &map.tokens).unwrap();
    let weights = Tensor::from_vec(wave(3 * 4 * 6, 1.7), (3, 4, 6), &Device::Cpu).unwrap();
    let loss = || {
        let out = module.forward(&map, &snr, &ForwardCtx::train()).unwrap();
        (out.tokens * &weights).unwrap().sum_all().unwrap()
    };
    jitter_biases(&store);
    check_store(&store, loss)
}

pub fn dncnn() -> GradReport {
    let d = Denoiser::new(
        DnCnnConfig {
            depth: 4,
            features: 4,
            grid: 4,
        },
        DType::F64,
        2,
    )
    .unwrap();
    // the zero-initialized output layer makes most gradients vanish
    let last = "dncnn.conv3.weight";
    let n = d.store.get(last).unwrap().var.elem_count();
    d.store.set_values_f64(last, &wave(n, 0.77).iter().map(|v| 0.1 * v).collect::<Vec<_>>()).unwrap();
    let x = Tensor::from_vec(wave(3 * 2 * 4 * 4, 0.29), (3, 2, 4, 4), &Device::Cpu).unwrap();
    let target = Tensor::from_vec(wave(3 * 2 * 4 * 4, 0.61), (3, 2, 4, 4), &Device::Cpu).unwrap();
    let loss = || {
        let out = d.net.forward(&x, &ForwardCtx::train()).unwrap();
        (out - &target).unwrap().sqr().unwrap().sum_all().unwrap()
    };
    check_store(&d.store, loss)
}
