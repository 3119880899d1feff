use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use duncan::data::{Domain, Modality, Severity, SlabPipeline, Volume, extract_slabs};
use duncan::losses::{LossReport, LossWeights, iqc_loss, prc_loss, total_loss};
use duncan::metrics::{mse, ms_ssim, ssim, uqi, vif};
use duncan::motion::{AcquisitionGeometry, MotionTrajectory, Pose, corrupt_kspace, corrupt_slice, forward_kspace};
use duncan::nn::{Critic, Direction, Duncan, NetworkConfig, tensor_to_slabs};
use duncan::phantom::{PhantomSpec, generate_phantom};

fn field(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, 1.0).unwrap();
    Array2::from_shape_simple_fn((rows, cols), || n.sample(&mut rng))
}

fn image(seed: u64, rows: usize, cols: usize) -> Tensor {
    let v = field(seed, 3 * rows, cols).mapv(|x| (x * 0.4).tanh());
    Tensor::from_vec(v.into_raw_vec_and_offset().0, (1, 3, rows, cols), &Device::Cpu).unwrap()
}

fn scalar(t: Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

fn max_abs(a: &Tensor, b: &Tensor) -> f64 {
    scalar((a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap())
}

fn model(rows: usize, cols: usize) -> Duncan {
    Duncan::new(&NetworkConfig::reduced(rows, cols), 7, DType::F64, &Device::Cpu).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn slabs_share_neighbouring_slices(slices in 3usize..8, rows in 2usize..12, cols in 2usize..12, seed in any::<u64>()) {
        let voxels = Array3::from_shape_vec((slices, rows, cols), field(seed, slices * rows, cols).mapv(|v| v as f32).into_raw_vec_and_offset().0).unwrap();
        let v = Volume::new("v", voxels, [1.0; 3], Modality::T1, Domain::Free, Severity::None).unwrap();
        let slabs = extract_slabs(&v).unwrap();
        prop_assert_eq!(slabs.len(), slices);
        for i in 1..slices - 2 {
            let a = slabs[i].pixels.index_axis(ndarray::Axis(2), 1);
            let b = slabs[i + 1].pixels.index_axis(ndarray::Axis(2), 0);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_motion_is_identity(rows in 4usize..40, cols in 4usize..40, seed in any::<u64>()) {
        let x = field(seed, rows, cols);
        let out = corrupt_slice(x.view(), &MotionTrajectory::zero(rows), &AcquisitionGeometry::default()).unwrap();
        let rms = ((&out - &x).mapv(|v| v * v).mean().unwrap()).sqrt();
        prop_assert!(rms <= 1e-5);
    }

    #[test]
    fn integer_translation_is_a_circular_shift(n in 8usize..40, ty in -10i64..10, tx in -10i64..10, seed in any::<u64>()) {
        let x = field(seed, n, n);
        let pose = Pose { tx: tx as f64, ty: ty as f64, ..Pose::default() };
        let out = corrupt_slice(x.view(), &MotionTrajectory::constant(n, pose), &AcquisitionGeometry::default()).unwrap();
        let m = n as i64;
        let want = Array2::from_shape_fn((n, n), |(r, c)| x[[(r as i64 - ty).rem_euclid(m) as usize, (c as i64 - tx).rem_euclid(m) as usize]]);
        let rms = ((&out - &want).mapv(|v| v * v).mean().unwrap()).sqrt();
        prop_assert!(rms <= 1e-4);
    }

    #[test]
    fn phase_only_motion_conserves_energy(n in 8usize..40, seed in any::<u64>(), poses in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 40)) {
        let x = field(seed, n, n);
        let mut t = MotionTrajectory::zero(n);
        for (p, &(tx, ty, tz, rx, ry)) in t.lines.iter_mut().zip(&poses) {
            *p = Pose { tx, ty, tz, rx, ry, rz: 0.0 };
        }
        let moved: f64 = corrupt_kspace(x.view(), &t, &AcquisitionGeometry::default()).unwrap().iter().map(|z| z.norm_sqr()).sum();
        let still: f64 = forward_kspace(x.view()).iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((moved - still).abs() / still <= 1e-6);
    }

    #[test]
    fn metrics_are_symmetric_with_unit_fixed_points(seed in any::<u64>(), noise in 0.01f64..0.5) {
        let a = field(seed, 48, 48).mapv(|v| v * 0.2 + 0.5);
        let b = &a + &field(seed ^ 1, 48, 48).mapv(|v| v * noise);
        let (a, b) = (a.view(), b.view());
        prop_assert_eq!(mse(a, b).unwrap(), mse(b, a).unwrap());
        prop_assert!((ssim(a, b, 2.0).unwrap() - ssim(b, a, 2.0).unwrap()).abs() <= 1e-12);
        prop_assert!((uqi(a, b).unwrap() - uqi(b, a).unwrap()).abs() <= 1e-12);
        prop_assert!((ssim(a, a, 2.0).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert!((uqi(a, a).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert!((vif(a, a, 2.0).unwrap() - 1.0).abs() <= 1e-9);
        prop_assert_eq!(mse(a, a).unwrap(), 0.0);
    }

    #[test]
    fn pixel_losses_are_nonnegative_and_vanish_only_on_equality(seed in any::<u64>(), n in 2usize..12) {
        let (a, b, c, d) = (image(seed, n, n), image(seed ^ 1, n, n), image(seed ^ 2, n, n), image(seed ^ 3, n, n));
        prop_assert!(scalar(prc_loss(&a, &b, &c, &d).unwrap()) > 0.0);
        prop_assert!(scalar(iqc_loss(&a, &b, &c, &d).unwrap()) > 0.0);
        prop_assert_eq!(scalar(prc_loss(&a, &a, &c, &c).unwrap()), 0.0);
        prop_assert_eq!(scalar(iqc_loss(&b, &b, &d, &d).unwrap()), 0.0);
    }

    #[test]
    fn total_is_affine_in_each_weight(terms in prop::array::uniform7(0.0f64..10.0), w in prop::array::uniform5(0.0f64..20.0), k in 0usize..5, bump in 0.1f64..5.0) {
        let report = LossReport { ms_cc: terms[0], prc: terms[1], erc: terms[2], src: terms[3], iqc: terms[4], sd_adv: terms[5], cd_adv: terms[6], total: 0.0 };
        let weights = |w: [f64; 5]| LossWeights { ms_cc: w[0], prc: w[1], erc: w[2], src: w[3], iqc: w[4] };
        let mut w2 = w;
        w2[k] += bump;
        let delta = total_loss(&report, &weights(w2)).unwrap() - total_loss(&report, &weights(w)).unwrap();
        prop_assert!((delta - bump * terms[k]).abs() <= 1e-9 * (1.0 + delta.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn composite_ops_keep_shape_and_range(r in 1usize..4, c in 1usize..4, seed in any::<u64>()) {
        let (rows, cols) = (16 * r, 16 * c);
        let m = model(rows, cols);
        let (x_c, x_f) = (image(seed, rows, cols), image(seed ^ 9, rows, cols));
        let mut outs = vec![
            m.translate(&x_c, Direction::CorruptedToFree).unwrap(),
            m.translate(&x_f, Direction::FreeToCorrupted).unwrap(),
            m.identity_translate(&x_c, Domain::Corrupted).unwrap(),
            m.identity_translate(&x_f, Domain::Free).unwrap(),
        ];
        let (a, b) = m.content_swap(&x_c, &x_f).unwrap();
        let (p, q) = m.cycle(&x_c, Domain::Corrupted).unwrap();
        outs.extend([a, b, p, q]);
        for o in &outs {
            prop_assert_eq!(o.dims(), &[1, 3, rows, cols]);
            let v: Vec<f64> = o.flatten_all().unwrap().to_vec1().unwrap();
            prop_assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
        }
        for critic in Critic::ALL {
            let grid = m.discriminate(&x_c, critic).unwrap();
            prop_assert_eq!(grid.dims(), &[1, 1, rows / 16, cols / 16]);
        }
    }

    #[test]
    fn inference_is_bitwise_deterministic(seed in any::<u64>()) {
        let m = model(32, 32);
        let x = image(seed, 32, 32);
        let a = m.translate(&x, Direction::CorruptedToFree).unwrap();
        let b = model(32, 32).translate(&x, Direction::CorruptedToFree).unwrap();
        prop_assert_eq!(tensor_to_slabs(&a).unwrap(), tensor_to_slabs(&b).unwrap());
    }

    #[test]
    fn first_block_ignores_global_intensity_scale(s in 0.01f64..100.0, seed in any::<u64>()) {
        let voxels = field(seed, 3 * 32, 32).mapv(|v| (v.abs() * 100.0) as f32);
        let v = Volume::new("v", voxels.into_shape_with_order((3, 32, 32)).unwrap(), [1.0; 3], Modality::T1, Domain::Free, Severity::None).unwrap();
        let scaled = v.with_voxels(v.voxels().mapv(|x| x * s as f32)).unwrap();
        let pipeline = SlabPipeline::new(32, 32);
        let m = model(32, 32);
        let first = |vol: &Volume| {
            let slab = &pipeline.prepare(vol).unwrap()[1];
            let t = duncan::nn::slabs_to_tensor(&[slab.pixels.view()], DType::F64, &Device::Cpu).unwrap();
            m.g_c.content.forward(&t).unwrap()[0].clone()
        };
        prop_assert!(max_abs(&first(&v), &first(&scaled)) <= 1e-5);
    }
}

#[test]
fn quality_metrics_degrade_with_noise() {
    let v = generate_phantom(&PhantomSpec::new(3, 192, 192, 4)).unwrap();
    let clean = v.slice(1).mapv(f64::from);
    let mut last: Option<[f64; 5]> = None;
    for (i, sigma) in [0.02, 0.05, 0.1].iter().enumerate() {
        let noisy = &clean + &field(40 + i as u64, 192, 192).mapv(|x| x * sigma);
        let (a, b) = (clean.view(), noisy.view());
        let now = [ssim(a, b, 1.0).unwrap(), ms_ssim(a, b, 1.0).unwrap(), uqi(a, b).unwrap(), vif(a, b, 1.0).unwrap(), -mse(a, b).unwrap()];
        if let Some(prev) = last {
            for (p, q) in prev.iter().zip(&now) {
                assert!(q <= p, "{prev:?} -> {now:?}");
            }
        }
        last = Some(now);
    }
}

#[test]
fn extractor_is_untouched_by_training() {
    use duncan::data::UnpairedSampler;
    use duncan::train::{TrainConfig, TrainState, run};
    let config = TrainConfig {
        network: NetworkConfig::reduced(32, 32),
        seed: 2,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(&config).unwrap();
    let probe = image(5, 32, 32).to_dtype(DType::F32).unwrap();
    let before = state.extractor.features(&probe).unwrap();
    let phantom = generate_phantom(&PhantomSpec::new(4, 32, 32, 8)).unwrap();
    let slabs = SlabPipeline::new(32, 32).prepare(&phantom).unwrap();
    run(&mut state, &UnpairedSampler::new(slabs.clone(), slabs).unwrap(), 2, None, None, |_| {}).unwrap();
    let after = state.extractor.features(&probe).unwrap();
    assert_eq!(max_abs(&before.0.to_dtype(DType::F64).unwrap(), &after.0.to_dtype(DType::F64).unwrap()), 0.0);
    assert_eq!(max_abs(&before.1.to_dtype(DType::F64).unwrap(), &after.1.to_dtype(DType::F64).unwrap()), 0.0);
}
