use msdcs::format::{decode_model, decode_packet, encode_model, encode_packet};
use msdcs::image::{decode_pgm, encode_pgm, quantize};
use msdcs::layers::{self, ConvSpec};
use msdcs::metrics::{psnr, ssim};
use msdcs::network::{self, derive_measurement_count, export_matrix, init_params, NetConfig, Phase, SamplingConfig};
use msdcs::optim::{adam_step, AdamHyper, Parameter};
use msdcs::{codec, wavelet, GrayImage, Tensor};
use proptest::prelude::*;

fn tensor(shape: [usize; 4], values: &[f32]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, values.iter().cycle().take(n).copied().collect()).unwrap()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, n)
}

fn rel_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.sub(b).unwrap().norm() / a.norm().max(b.norm()).max(1e-12)
}

fn sorted_bits(t: &Tensor) -> Vec<u32> {
    let mut v: Vec<u32> = t.data().iter().map(|x| x.to_bits()).collect();
    v.sort_unstable();
    v
}

/// L2 norm summed in sorted order, so equal multisets give equal norms.
fn canonical_norm(values: &[f32]) -> f64 {
    let mut sq: Vec<f64> = values.iter().map(|&v| v as f64 * v as f64).collect();
    sq.sort_by(f64::total_cmp);
    sq.iter().sum::<f64>().sqrt()
}

fn small_net() -> NetConfig {
    NetConfig {
        enhance1_depth: 2,
        enhance1_width: 4,
        mwcnn_levels: 1,
        mwcnn_widths: vec![4],
        mwcnn_convs_per_level: 1,
    }
}

/// Haar analysis of one 2×2 cell, written out from the band definitions.
fn haar_cell(a: f64, b: f64, c: f64, d: f64) -> [f64; 4] {
    [
        (a + b + c + d) / 2.0,
        (-a + b - c + d) / 2.0,
        (-a - b + c + d) / 2.0,
        (a - b - c + d) / 2.0,
    ]
}

/// Measurements of block `(by, bx)` as an explicit matrix-vector product:
/// the block's wavelet coefficients are vectorized band-major, row-major.
fn block_measurements(img: &Tensor, matrix: &[f32], m: usize, n_b: usize, by: usize, bx: usize) -> Vec<f64> {
    let tile = 2 * n_b;
    let mut vect = vec![0.0f64; 4 * n_b * n_b];
    for y in 0..n_b {
        for x in 0..n_b {
            let px = |dy, dx| img.get(0, 0, by * tile + 2 * y + dy, bx * tile + 2 * x + dx) as f64;
            let bands = haar_cell(px(0, 0), px(0, 1), px(1, 0), px(1, 1));
            for (k, v) in bands.into_iter().enumerate() {
                vect[k * n_b * n_b + y * n_b + x] = v;
            }
        }
    }
    (0..m)
        .map(|i| {
            (0..vect.len())
                .map(|j| matrix[i * vect.len() + j] as f64 * vect[j])
                .sum()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_is_linear(x in values(96), y in values(96), w in values(54), alpha in -2.0f32..2.0, beta in -2.0f32..2.0) {
        let spec = ConvSpec::square(3, 2, 3, 1, 1, false);
        let (x, y, w) = (tensor([1, 3, 4, 8], &x), tensor([1, 3, 4, 8], &y), tensor([2, 3, 3, 3], &w));
        let mut mix = x.clone();
        mix.scale(alpha);
        let mut yb = y.clone();
        yb.scale(beta);
        mix.add_assign(&yb).unwrap();
        let lhs = layers::conv2d(&mix, &w, None, &spec).unwrap();
        let mut rhs = layers::conv2d(&x, &w, None, &spec).unwrap();
        rhs.scale(alpha);
        let mut ry = layers::conv2d(&y, &w, None, &spec).unwrap();
        ry.scale(beta);
        rhs.add_assign(&ry).unwrap();
        prop_assert!(rel_diff(&lhs, &rhs) < 1e-5);
    }

    #[test]
    fn permutation_layers_preserve_values(v in values(72), split in 0usize..=2) {
        let t = tensor([1, 2, 6, 6], &v);
        for out in [layers::space_to_depth(&t, 2).unwrap(), layers::space_to_depth(&t, 3).unwrap()] {
            prop_assert_eq!(sorted_bits(&out), sorted_bits(&t));
            prop_assert_eq!(canonical_norm(out.data()), canonical_norm(t.data()));
        }
        let d = tensor([1, 8, 3, 3], &v);
        prop_assert_eq!(sorted_bits(&layers::depth_to_space(&d, 2).unwrap()), sorted_bits(&d));
        let (a, b) = layers::split_channels(&t, split).unwrap();
        let joined = layers::concat_channels(&a, &b).unwrap();
        prop_assert_eq!(joined.data(), t.data());
        let parts: Vec<f32> = a.data().iter().chain(b.data()).copied().collect();
        prop_assert_eq!(canonical_norm(&parts), canonical_norm(t.data()));
    }

    #[test]
    fn wavelet_is_orthonormal(v in values(128)) {
        let t = tensor([2, 1, 8, 8], &v);
        let c = wavelet::dwt2(&t).unwrap();
        prop_assert!(rel_diff(&wavelet::idwt2(&c).unwrap(), &t) < 1e-6);
        prop_assert!((c.norm() - t.norm()).abs() <= 1e-5 * t.norm());
    }

    #[test]
    fn sampling_matches_per_block_matrix(n_b in prop::sample::select(vec![1usize, 2, 4]), r in 0.05f32..=1.0, seed in any::<u64>(), v in values(64)) {
        let sampling = SamplingConfig::new(n_b, r).unwrap();
        let model = init_params(sampling, small_net(), seed).unwrap();
        let tile = 2 * n_b;
        let (gh, gw) = (2, 3);
        let img = tensor([1, 1, gh * tile, gw * tile], &v);
        let meas = network::sample(&img, &model).unwrap();
        let matrix = export_matrix(&model);
        prop_assert_eq!((matrix.rows, matrix.cols), (sampling.measurements, 4 * n_b * n_b));
        for by in 0..gh {
            for bx in 0..gw {
                let want = block_measurements(&img, &matrix.data, matrix.rows, n_b, by, bx);
                let got: Vec<f64> = (0..matrix.rows).map(|i| meas.get(0, i, by, bx) as f64).collect();
                let err = want.iter().zip(&got).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let scale = want.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
                prop_assert!(err / scale < 1e-4);
            }
        }
    }

    #[test]
    fn sampling_path_is_linear(a in values(64), b in values(64), alpha in -2.0f32..2.0, beta in -2.0f32..2.0, seed in any::<u64>()) {
        let model = init_params(SamplingConfig::new(2, 0.3).unwrap(), small_net(), seed).unwrap();
        let run = |x: &Tensor| network::forward(x, &model, Phase::Initial).unwrap();
        let (x, y) = (tensor([1, 1, 8, 8], &a), tensor([1, 1, 8, 8], &b));
        let mut mix = x.clone();
        mix.scale(alpha);
        let mut yb = y.clone();
        yb.scale(beta);
        mix.add_assign(&yb).unwrap();
        let mut rhs = run(&x);
        rhs.scale(alpha);
        let mut ry = run(&y);
        ry.scale(beta);
        rhs.add_assign(&ry).unwrap();
        prop_assert!(rel_diff(&run(&mix), &rhs) < 1e-5);
    }

    #[test]
    fn realized_subrate_is_close_to_target(n_b in 1usize..=16, r in 0.001f64..=1.0) {
        let m = derive_measurement_count(r, n_b).unwrap();
        let dim = 4 * n_b * n_b;
        let realized = m as f64 / dim as f64;
        prop_assert!((1..=dim).contains(&m));
        // Clamping to one measurement can exceed half a step for tiny targets.
        if r * dim as f64 >= 0.5 {
            prop_assert!((realized - r).abs() <= 0.5 / dim as f64 + 1e-12);
        }
        prop_assert!((realized - r).abs() <= 1.0 / dim as f64 || m == 1);
    }

    #[test]
    fn adam_ignores_zero_gradient(v in values(6), lr in 1e-5f32..1.0, steps in 1usize..5) {
        let mut p = Parameter::new("p", tensor([1, 1, 2, 3], &v));
        for _ in 0..steps {
            adam_step(&mut p, &AdamHyper::with_lr(lr)).unwrap();
        }
        prop_assert_eq!(p.value, tensor([1, 1, 2, 3], &v));
    }

    #[test]
    fn pgm_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u8>()) {
        let pixels = (0..w * h).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let img = GrayImage::new(w, h, pixels).unwrap();
        prop_assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
    }

    #[test]
    fn quantize_clamps_and_rounds(v in -2.0f32..3.0) {
        let q = quantize(v) as f32;
        let scaled = v.clamp(0.0, 1.0) * 255.0;
        prop_assert!((q - scaled).abs() <= 0.5 + 1e-4);
    }

    #[test]
    fn psnr_and_ssim_are_symmetric_and_bounded(a in prop::collection::vec(any::<u8>(), 256), b in prop::collection::vec(any::<u8>(), 256)) {
        let (x, y) = (GrayImage::new(16, 16, a).unwrap(), GrayImage::new(16, 16, b).unwrap());
        prop_assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
        let s = ssim(&x, &y).unwrap();
        prop_assert!((s - ssim(&y, &x).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert_eq!(ssim(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn files_round_trip_bit_exactly(seed in any::<u64>(), phase in 1u32..=3, v in prop::collection::vec(any::<u8>(), 96)) {
        let mut model = init_params(SamplingConfig::new(2, 0.5).unwrap(), small_net(), seed).unwrap();
        model.randomize_enhancements(seed ^ 1);
        model.truncate_to(Phase::from_number(phase).unwrap());
        let bytes = encode_model(&model);
        let back = decode_model(&bytes).unwrap();
        prop_assert_eq!(encode_model(&back), bytes);
        for (a, b) in model.params().iter().zip(back.params()) {
            let bits = |p: &Parameter| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
        let img = GrayImage::new(12, 8, v).unwrap();
        let packet = codec::compress(&model, &img).unwrap();
        let encoded = encode_packet(&packet);
        prop_assert_eq!(decode_packet(&encoded).unwrap(), packet);
    }
}

#[test]
fn psnr_decreases_with_noise_amplitude() {
    let base = GrayImage::new(32, 32, (0..1024).map(|i| (64 + (i % 97)) as u8).collect()).unwrap();
    let noisy = |amp: i32| {
        let px = base
            .pixels
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let n = ((i * 7919) % 21) as i32 - 10;
                (p as i32 + n * amp / 10).clamp(0, 255) as u8
            })
            .collect();
        GrayImage::new(32, 32, px).unwrap()
    };
    let scores: Vec<f64> = [2, 5, 9].iter().map(|&a| psnr(&base, &noisy(a)).unwrap()).collect();
    assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
}
