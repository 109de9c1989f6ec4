use lvquant::augment::{apply_transform, Transform};
use lvquant::image::{Grid, BACKGROUND, MYOCARDIUM};
use lvquant::layers::{batch_norm_train, conv2d, depthwise_conv2d, ConvGeom};
use lvquant::metrics::{dice, jaccard_index};
use lvquant::nets::{Family, Network, NetworkSpec};
use lvquant::phantom::{generate, PhantomSpec};
use lvquant::quantify::physio;
use lvquant::volume::{LabeledVolume, read_volume, write_volume};
use lvquant::{Tape, Tensor};
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn tensor(shape: [usize; 4], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

fn values(shape: [usize; 4]) -> impl Strategy<Value = Tensor<f64>> {
    proptest::collection::vec(-1.0f64..1.0, shape.iter().product::<usize>()).prop_map(move |d| tensor(shape, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dice_and_jaccard_are_related(pairs in proptest::collection::vec(any::<(bool, bool)>(), 1..200)) {
        let (a, b): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let j = jaccard_index(&a, &b).unwrap();
        let d = dice(&a, &b).unwrap();
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
    }

    /// <conv(x), g> = <x, conv^T(g)> for the bias-free convolution.
    #[test]
    fn conv_backward_is_the_transpose_map(x in values([2, 3, 6, 5]), w in values([4, 3, 3, 3]), g in values([2, 4, 6, 5])) {
        let mut t = Tape::new();
        let xv = t.leaf(x.clone(), true);
        let wv = t.constant(w);
        let y = conv2d(&mut t, xv, wv, None, ConvGeom::same(3, 3)).unwrap();
        let gv = t.constant(g.clone());
        let p = t.mul(y, gv).unwrap();
        let s = t.sum(p);
        t.backward(s).unwrap();
        let lhs = dot(t.value(y).data(), g.data());
        let rhs = dot(x.data(), t.grad(xv).unwrap().data());
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn depthwise_backward_is_the_transpose_map(x in values([1, 3, 7, 7]), w in values([3, 1, 1, 5]), g in values([1, 3, 7, 7])) {
        let mut t = Tape::new();
        let xv = t.leaf(x.clone(), true);
        let wv = t.constant(w);
        let y = depthwise_conv2d(&mut t, xv, wv, ConvGeom::same(1, 5)).unwrap();
        let gv = t.constant(g.clone());
        let p = t.mul(y, gv).unwrap();
        let s = t.sum(p);
        t.backward(s).unwrap();
        let lhs = dot(t.value(y).data(), g.data());
        let rhs = dot(x.data(), t.grad(xv).unwrap().data());
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn batch_norm_standardizes_large_batches(x in values([8, 2, 3, 3]), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let x = x.map(|v| v * scale + shift);
        let mut t = Tape::new();
        let xv = t.constant(x);
        let g = t.constant(Tensor::ones([2]));
        let b = t.constant(Tensor::zeros([2]));
        let (y, _) = batch_norm_train(&mut t, xv, g, b, 1e-12).unwrap();
        let y = t.value(y);
        for c in 0..2 {
            let vals: Vec<f64> = (0..8).flat_map(|n| (0..9).map(move |p| (n * 2 + c) * 9 + p)).map(|i| y.data()[i]).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            prop_assert!(m.abs() < 1e-5);
            prop_assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn shift_keeps_intensity_values(data in proptest::collection::vec(0.0f32..1.0, 64), dx in -3i64..=3, dy in -3i64..=3) {
        let img = Grid::new(8, 8, data.clone()).unwrap();
        let lab = Grid::filled(8, 8, MYOCARDIUM);
        let (out, out_lab) = apply_transform(&img, &lab, &Transform::Shift { dx, dy }).unwrap();
        for &v in &out.data {
            prop_assert!(v == 0.0 || data.contains(&v));
        }
        for y in 0..8usize {
            for x in 0..8usize {
                let (sy, sx) = (y as i64 - dy, x as i64 - dx);
                let inside = (0..8).contains(&sy) && (0..8).contains(&sx);
                prop_assert_eq!(out_lab.get(y, x), if inside { MYOCARDIUM } else { BACKGROUND });
            }
        }
    }

    #[test]
    fn volume_files_round_trip(slices in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>(), labeled in any::<bool>()) {
        let n = slices * h * w;
        let images = (0..slices).map(|s| Grid::from_fn(h, w, |y, x| ((seed as usize + s * 31 + y * 7 + x) % 97) as f32 / 7.0 - 3.0)).collect();
        let labels = labeled.then(|| (0..slices).map(|s| Grid::from_fn(h, w, |y, x| ((s + y + x) % 3) as u8)).collect());
        let v = LabeledVolume::new(images, labels, (1.25, 0.5, 8.0), (seed % 20) as usize).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.cqv");
        write_volume(&v, &path).unwrap();
        let back = read_volume(&path).unwrap();
        prop_assert_eq!(back.voxels.len(), n);
        prop_assert_eq!(back, v);
    }
}

fn shifted(v: &LabeledVolume, dy: isize, dx: isize) -> LabeledVolume {
    let images = (0..v.slices).map(|s| v.image(s).crop(-dy, -dx, v.h, v.w, 0.0)).collect();
    let labels = (0..v.slices).map(|s| v.label_map(s).unwrap().crop(-dy, -dx, v.h, v.w, BACKGROUND)).collect();
    LabeledVolume::new(images, Some(labels), v.spacing_mm, v.phase).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn whole_voxel_translation_changes_no_measure(seed in 0u64..1000, dy in -12isize..=12, dx in -12isize..=12) {
        let spec = PhantomSpec { phases: 6, n_slices: 4, seed, ..Default::default() };
        let p = generate(&spec).unwrap();
        let moved: Vec<LabeledVolume> = p.volumes.iter().map(|v| shifted(v, dy, dx)).collect();
        let a = physio(&p.volumes, spec.heart_rate_bpm).unwrap();
        let b = physio(&moved, spec.heart_rate_bpm).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn extremal_phases_match_construction(seed in 0u64..1000, phases in prop::sample::select(vec![4usize, 8, 12, 20])) {
        let spec = PhantomSpec { phases, n_slices: 5, seed, ..Default::default() };
        let p = generate(&spec).unwrap();
        let r = physio(&p.volumes, spec.heart_rate_bpm).unwrap();
        prop_assert_eq!((r.ed_phase, r.es_phase), (0, spec.es_phase()));
    }
}

#[test]
fn forward_pass_is_bit_deterministic() {
    for family in Family::ALL {
        let spec = NetworkSpec::miniature(family, 3, 4, 32);
        let mut net = Network::<f32>::build(&spec, 11).unwrap();
        net.initialize_running_stats();
        let x = Tensor::from_fn([3, 1, 32, 32], |i| ((i * 37) % 101) as f32 / 101.0);
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        assert_eq!(a.data(), b.data(), "{family}");
    }
}
