//! Randomized invariants of the tensor engine, model components, radiometry
//! and metrics.

mod common;

use proptest::prelude::*;

use hyhdr_core::datagen::{expose_ldr, synth_scene, SceneSpec};
use hyhdr_core::hdr::{gamma_correct, loss_value, mu_law, HdrImage};
use hyhdr_core::io::{decode_checkpoint, decode_pfm, decode_ppm, encode_checkpoint, encode_pfm, encode_ppm, Checkpoint};
use hyhdr_core::metrics::{psnr, ssim, Domain};
use hyhdr_core::model::alignment::{gating_fuse, ghost_attention, patch_aggregate, project};
use hyhdr_core::model::fusion::{ffn_channel_attention, rdtb_block, stl_layer};
use hyhdr_core::model::{ModelConfig, ParamStore, Trace};
use hyhdr_core::tensor::{
    bilinear_sample, conv2d, softmax_lastdim, window_partition, window_reverse, Graph, Tensor, WindowGrid,
};
use hyhdr_core::train::TrainConfig;

use common::{model_params, uniform};

const CASES: u32 = 128;

fn small_config() -> ModelConfig {
    ModelConfig {
        window: 4,
        pa_window: 4,
        ..ModelConfig::tiny()
    }
}

fn hdr(t: Tensor<f64>) -> HdrImage {
    HdrImage::new(t.cast()).unwrap()
}

fn brute_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (h, wd, cin) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (k, cout) = (w.dims()[0], w.dims()[3]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[oh, ow, cout]);
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let mut acc = b.data()[co];
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            acc += x.at(&[iy as usize, ix as usize, ci]) * w.at(&[ky, kx, ci, co]);
                        }
                    }
                }
                out.data_mut()[(oy * ow + ox) * cout + co] = acc;
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    // ---------------------------------------------------------------
    // Tensor engine
    // ---------------------------------------------------------------

    #[test]
    fn partition_then_reverse_is_identity(
        (h, w, m, shift) in (1usize..20, 1usize..20).prop_flat_map(|(h, w)| {
            (Just(h), Just(w), 1..=h.min(w)).prop_flat_map(|(h, w, m)| (Just(h), Just(w), Just(m), 0..m))
        }),
        c in 1usize..4,
        seed in any::<u64>(),
    ) {
        let x = uniform(&[h, w, c], -1.0, 1.0, seed);
        let grid = WindowGrid::new(h, w, m, shift).unwrap();
        let back = window_reverse(&window_partition(&x, &grid).unwrap(), &grid, h, w).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, n in 1usize..12, scale in 0.1f64..60.0, seed in any::<u64>()) {
        let x = uniform(&[rows, n], -scale, scale, seed);
        for row in softmax_lastdim(&x).unwrap().data().chunks(n) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let x32: Tensor<f32> = x.cast();
        for row in softmax_lastdim(&x32).unwrap().data().chunks(n) {
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn bilinear_sample_at_integer_points_is_indexing(
        h in 1usize..10, w in 1usize..10, c in 1usize..4, seed in any::<u64>(),
        picks in prop::collection::vec((0usize..100, 0usize..100), 1..20),
    ) {
        let x = uniform(&[h, w, c], -1.0, 1.0, seed);
        let pts: Vec<(usize, usize)> = picks.iter().map(|&(y, xx)| (y % h, xx % w)).collect();
        let points = Tensor::new(vec![pts.len(), 2], pts.iter().flat_map(|&(y, xx)| [y as f64, xx as f64]).collect()).unwrap();
        let out = bilinear_sample(&x, &points).unwrap();
        for (i, &(y, xx)) in pts.iter().enumerate() {
            for ch in 0..c {
                prop_assert_eq!(out.data()[i * c + ch], x.at(&[y, xx, ch]));
            }
        }
    }

    #[test]
    fn conv2d_matches_nested_loops(
        h in 3usize..17, w in 3usize..17, cin in 1usize..5, cout in 1usize..5,
        k in prop::sample::select(vec![1usize, 3]), stride in 1usize..3, seed in any::<u64>(),
    ) {
        let pad = k / 2;
        let x = uniform(&[h, w, cin], -1.0, 1.0, seed);
        let wt = uniform(&[k, k, cin, cout], -1.0, 1.0, seed ^ 1);
        let b = uniform(&[cout], -1.0, 1.0, seed ^ 2);
        let got = conv2d(&x, &wt, &b, stride, pad).unwrap();
        let want = brute_conv(&x, &wt, &b, stride, pad);
        prop_assert_eq!(got.dims(), want.dims());
        for (a, b) in got.data().iter().zip(want.data()) {
            prop_assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    // ---------------------------------------------------------------
    // Residual identities
    // ---------------------------------------------------------------

    #[test]
    fn stl_is_identity_with_zeroed_projections(
        h in 1usize..10, w in 1usize..10, shifted in any::<bool>(), seed in any::<u64>(),
    ) {
        let cfg = small_config();
        let mut params = model_params(&cfg, seed);
        let prefix = "fusion.rdtb.0.stl.0";
        for name in ["proj.w", "proj.b", "mlp.fc2.w", "mlp.fc2.b"] {
            params.zero_prefix(&format!("{prefix}.{name}"));
        }
        let x = uniform(&[h, w, cfg.channels], -2.0, 2.0, seed ^ 7);
        let mut g = Graph::new();
        let p = params.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let shift = if shifted { cfg.window / 2 } else { 0 };
        let y = stl_layer(&mut g, &p, &cfg, prefix, xv, shift, &mut Trace::default()).unwrap();
        prop_assert_eq!(g.value(y).data(), x.data());
    }

    #[test]
    fn rdtb_is_identity_with_zeroed_output_conv(h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let cfg = small_config();
        let mut params = model_params(&cfg, seed);
        params.zero_prefix("fusion.rdtb.0.conv.");
        let x = uniform(&[h, w, cfg.channels], -2.0, 2.0, seed ^ 9);
        let mut g = Graph::new();
        let p = params.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let y = rdtb_block(&mut g, &p, &cfg, "fusion.rdtb.0", xv, &mut Trace::default()).unwrap();
        prop_assert_eq!(g.value(y).data(), x.data());
    }

    #[test]
    fn gating_reduces_to_fused_conv_with_dead_mlp(h in 1usize..8, w in 1usize..8, seed in any::<u64>()) {
        let cfg = small_config();
        let mut params = model_params(&cfg, seed);
        params.zero_prefix("align.gate.mlp.");
        params.zero_prefix("align.gate.ln.b");
        let d = cfg.attn_dim;
        let f_pa = uniform(&[h, w, d], -1.0, 1.0, seed ^ 11);
        let f_ga = uniform(&[h, w, d], -1.0, 1.0, seed ^ 12);

        let phi = |x: &Tensor<f64>| {
            conv2d(x, params.get("align.gate.phi.w").unwrap(), params.get("align.gate.phi.b").unwrap(), 1, 1)
                .unwrap()
                .map(|v| 1.0 / (1.0 + (-v).exp()))
        };
        let (w1, w2) = (phi(&f_pa), phi(&f_ga));
        let a = Tensor::new(f_ga.dims().to_vec(), f_ga.data().iter().zip(w1.data()).map(|(x, s)| x * s).collect()).unwrap();
        let b = Tensor::new(f_pa.dims().to_vec(), f_pa.data().iter().zip(w2.data()).map(|(x, s)| x * s).collect()).unwrap();
        let cat = Tensor::concat_channels(&[&a, &b]).unwrap();
        let want = conv2d(&cat, params.get("align.gate.fuse.w").unwrap(), params.get("align.gate.fuse.b").unwrap(), 1, 1).unwrap();

        let mut g = Graph::new();
        let p = params.bind_frozen(&mut g);
        let (xa, xb) = (g.constant(f_pa), g.constant(f_ga));
        let y = gating_fuse(&mut g, &p, xa, xb).unwrap();
        prop_assert!(g.value(y).max_abs_diff(&want) <= 1e-12);
    }

    // ---------------------------------------------------------------
    // Alignment
    // ---------------------------------------------------------------

    #[test]
    fn patch_aggregation_absorbs_constant_frames(
        h in 1usize..10, w in 1usize..10, shifted in any::<bool>(), seed in any::<u64>(),
    ) {
        let cfg = small_config();
        let params = model_params(&cfg, seed);
        let c = cfg.channels;
        let level = uniform(&[c], -1.0, 1.0, seed ^ 13);
        let f_i = Tensor::from_fn(&[h, w, c], |i| level.data()[i % c]);
        let f_r = uniform(&[h, w, c], -1.0, 1.0, seed ^ 14);
        let expected: Vec<f64> = (0..cfg.attn_dim)
            .map(|o| (0..c).map(|i| level.data()[i] * params.get("align.wv.w").unwrap().at(&[i, o])).sum())
            .collect();

        let mut g = Graph::new();
        let p = params.bind_frozen(&mut g);
        let (r, i) = (g.constant(f_r), g.constant(f_i));
        let proj = project(&mut g, &p, r, i).unwrap();
        let (out, attn) = patch_aggregate(&mut g, &p, &cfg, proj, shifted).unwrap();
        for (k, v) in g.value(out).data().iter().enumerate() {
            prop_assert!((v - expected[k % cfg.attn_dim]).abs() < 1e-5);
        }
        let n = *g.dims(attn).last().unwrap();
        for row in g.value(attn).data().chunks(n) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn shifted_and_unshifted_aggregation_agree_on_constant_maps(
        h in 1usize..10, w in 1usize..10, seed in any::<u64>(),
    ) {
        let cfg = small_config();
        let params = model_params(&cfg, seed);
        let c = cfg.channels;
        let lr = uniform(&[c], -1.0, 1.0, seed ^ 15);
        let li = uniform(&[c], -1.0, 1.0, seed ^ 16);
        let run = |shifted: bool| {
            let mut g = Graph::new();
            let p = params.bind_frozen(&mut g);
            let r = g.constant(Tensor::from_fn(&[h, w, c], |k| lr.data()[k % c]));
            let i = g.constant(Tensor::from_fn(&[h, w, c], |k| li.data()[k % c]));
            let proj = project(&mut g, &p, r, i).unwrap();
            let (out, _) = patch_aggregate(&mut g, &p, &cfg, proj, shifted).unwrap();
            g.value(out).clone()
        };
        prop_assert!(run(false).max_abs_diff(&run(true)) <= 1e-12);
    }

    #[test]
    fn ghost_and_channel_attention_stay_in_open_unit_interval(
        h in 1usize..8, w in 1usize..8, seed in any::<u64>(),
    ) {
        let cfg = small_config();
        let params = model_params(&cfg, seed);
        let c = cfg.channels;
        let mut g = Graph::new();
        let p = params.bind_frozen(&mut g);
        let r = g.constant(uniform(&[h, w, c], -3.0, 3.0, seed ^ 17));
        let i = g.constant(uniform(&[h, w, c], -3.0, 3.0, seed ^ 18));
        let proj = project(&mut g, &p, r, i).unwrap();
        let (_, a) = ghost_attention(&mut g, &p, proj).unwrap();
        prop_assert!(g.value(a).data().iter().all(|&v| v > 0.0 && v < 1.0));
        let x = g.constant(uniform(&[h, w, c], -3.0, 3.0, seed ^ 19));
        let (_, s) = ffn_channel_attention(&mut g, &p, "fusion.rdtb.0.wdtl", x).unwrap();
        prop_assert!(g.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    // ---------------------------------------------------------------
    // Radiometry
    // ---------------------------------------------------------------

    #[test]
    fn mu_law_is_strictly_monotone(x in 0.0f64..1.0, gap in 1e-9f64..1.0) {
        let y = (x + gap).min(1.0);
        prop_assume!(y > x);
        prop_assert!(mu_law(x, 5000.0) < mu_law(y, 5000.0));
    }

    #[test]
    fn gamma_correction_is_monotone_and_scales_with_exposure(
        a in 0.0f32..1.0, b in 0.0f32..1.0, t in 0.1f64..8.0,
    ) {
        let img = Tensor::new(vec![1, 2, 1], vec![a.min(b), a.max(b)]).unwrap();
        let at_t = gamma_correct(&img, t, 2.2).unwrap();
        let at_one = gamma_correct(&img, 1.0, 2.2).unwrap();
        prop_assert!(at_t.data()[0] <= at_t.data()[1]);
        for (x, y) in at_t.data().iter().zip(at_one.data()) {
            prop_assert!(((*x as f64) * t - *y as f64).abs() <= 1e-6 * (*y as f64).max(1e-3) + 1e-7);
        }
    }

    #[test]
    fn exposure_round_trip_within_quantization(
        h in 1usize..6, w in 1usize..6, seed in any::<u64>(), ev in prop::sample::select(vec![-2.0f64, 0.0, 2.0]),
    ) {
        let t = 2f64.powf(ev);
        let r = uniform(&[h, w, 3], 0.0, 1.0, seed);
        let ldr = expose_ldr(&hdr(r.clone()), t, 2.2).unwrap();
        let back = gamma_correct(ldr.pixels(), t, 2.2).unwrap();
        let bound = 2.2 * (0.5 / 255.0) / t + 1e-6;
        for ((&rv, &l), &bv) in r.data().iter().zip(ldr.pixels().data()).zip(back.data()) {
            let rv32 = rv as f32 as f64;
            if rv32 * t >= 1.0 {
                prop_assert_eq!(l, 1.0);
            } else {
                prop_assert!((bv as f64 - rv32).abs() <= bound);
            }
        }
    }

    #[test]
    fn loss_is_non_negative_and_zero_on_equal_images(h in 4usize..12, w in 4usize..12, seed in any::<u64>()) {
        let a = hdr(uniform(&[h, w, 3], 0.0, 1.0, seed));
        let b = hdr(uniform(&[h, w, 3], 0.0, 1.0, seed ^ 1));
        prop_assert!(loss_value(&a, &b, 1e-2).unwrap().total >= 0.0);
        prop_assert_eq!(loss_value(&a, &a, 1e-2).unwrap().total, 0.0);
    }

    // ---------------------------------------------------------------
    // Metrics
    // ---------------------------------------------------------------

    #[test]
    fn psnr_falls_as_noise_grows(
        seed in any::<u64>(), a1 in 0.01f64..0.08, d2 in 0.01f64..0.08, d3 in 0.01f64..0.08,
    ) {
        let base = uniform(&[12, 12, 3], 0.3, 0.7, seed);
        let noise = uniform(&[12, 12, 3], -1.0, 1.0, seed ^ 3);
        let noisy = |amp: f64| hdr(Tensor::new(
            base.dims().to_vec(),
            base.data().iter().zip(noise.data()).map(|(b, n)| b + amp * n).collect(),
        ).unwrap());
        let clean = hdr(base.clone());
        for domain in [Domain::Linear, Domain::Mu] {
            let p: Vec<f64> = [a1, a1 + d2, a1 + d2 + d3]
                .iter()
                .map(|&amp| psnr(&clean, &noisy(amp), domain).unwrap().as_f64())
                .collect();
            prop_assert!(p[0] > p[1] && p[1] > p[2], "{:?}", p);
        }
    }

    #[test]
    fn ssim_is_one_on_itself_symmetric_and_bounded(
        h in 11usize..20, w in 11usize..20, seed in any::<u64>(),
    ) {
        let a = hdr(uniform(&[h, w, 3], 0.0, 1.0, seed));
        let b = hdr(uniform(&[h, w, 3], 0.0, 1.0, seed ^ 5));
        for domain in [Domain::Linear, Domain::Mu] {
            prop_assert_eq!(ssim(&a, &a, domain).unwrap(), 1.0);
            let ab = ssim(&a, &b, domain).unwrap();
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!((ab - ssim(&b, &a, domain).unwrap()).abs() <= 1e-12);
        }
    }

    // ---------------------------------------------------------------
    // Data and I/O
    // ---------------------------------------------------------------

    #[test]
    fn random_scenes_respect_their_bounds(seed in any::<u64>(), h in 8usize..40, w in 8usize..40) {
        let spec = SceneSpec::random(h, w, seed);
        spec.validate().unwrap();
        for o in &spec.objects {
            prop_assert!(o.displacement.0.abs() <= spec.max_displacement);
            prop_assert!(o.displacement.1.abs() <= spec.max_displacement);
        }
        let s = synth_scene(&spec, seed).unwrap();
        prop_assert!(s.gt.radiance().data().iter().all(|v| (0.0..=1.0).contains(v)));
        let again = synth_scene(&spec, seed).unwrap();
        prop_assert_eq!(again.gt.radiance().data(), s.gt.radiance().data());
    }

    #[test]
    fn image_codecs_round_trip(h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let hdr_img: Tensor<f32> = uniform(&[h, w, 3], 0.0, 4.0, seed).cast();
        prop_assert_eq!(decode_pfm(&encode_pfm(&hdr_img).unwrap()).unwrap(), hdr_img);
        let ldr: Tensor<f32> = Tensor::from_fn(&[h, w, 3], |i| ((i as u64 * 37 + seed) % 256) as f32 / 255.0);
        prop_assert_eq!(decode_ppm(&encode_ppm(&ldr).unwrap()).unwrap(), ldr);
    }

    #[test]
    fn checkpoints_round_trip(n in 1usize..5, seed in any::<u64>(), step in any::<u64>()) {
        let mut params = ParamStore::new();
        for k in 0..n {
            let dims: Vec<usize> = (0..=k % 3).map(|j| 1 + (k + j) % 4).collect();
            params.insert(format!("t{k}.w"), uniform(&dims, -5.0, 5.0, seed ^ k as u64).cast::<f32>());
        }
        let ckpt = Checkpoint { params, config: TrainConfig { seed, ..TrainConfig::default() }, step, adam: None };
        let back = decode_checkpoint(&encode_checkpoint(&ckpt).unwrap()).unwrap();
        prop_assert_eq!(back.step, step);
        prop_assert_eq!(back.config.seed, seed);
        for ((na, ta), (nb, tb)) in ckpt.params.iter().zip(back.params.iter()) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(ta, tb);
        }
    }
}
