use super::*;
use crate::losses::silog_loss;
use crate::tensor::{finite_diff_check, finite_diff_check_inputs};
use proptest::prelude::*;
use rand::Rng;

const H: usize = 6;
const W: usize = 7;

fn small_config() -> RefinementConfig {
    RefinementConfig { proj_channels: 2, context_channels: 2, hidden_channels: 3, t_max: 3, ..Default::default() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn map(seed: u64, lo: f64, hi: f64, c: usize) -> Tensor {
    Tensor::random_uniform(Shape::new(c, H, W), lo, hi, &mut rng(seed))
}

fn random_head_weights(config: &RefinementConfig, seed: u64) -> RefinementWeights {
    let mut w = RefinementWeights::random(config, config.hidden_channels, seed).unwrap();
    let mut r = rng(seed ^ 0xff);
    w.head1 = SepConvWeights::random(config.hidden_channels, 1, 0.5, &mut r);
    w.head2 = SepConvWeights::random(config.hidden_channels, 1, 0.5, &mut r);
    w
}

#[test]
fn init_hidden_range_and_saturation() {
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::zeros(Shape::new(2, H, W)));
    let h = init_hidden(&mut tape, z, z, None).unwrap();
    assert_eq!(tape.shape(h), Shape::new(4, H, W));
    assert!(tape.value(h).data().iter().all(|v| *v == 0.0));

    let big = tape.leaf(Tensor::full(Shape::new(2, H, W), 30.0));
    let h = init_hidden(&mut tape, big, big, None).unwrap();
    assert!(tape.value(h).data().iter().all(|v| (1.0 - v) < 1e-12 && *v <= 1.0));

    let a = tape.leaf(map(1, -5.0, 5.0, 3));
    let b = tape.leaf(map(2, -5.0, 5.0, 1));
    let proj = PointwiseWeights::random(4, 6, 2.0, &mut rng(3)).bind(&mut tape);
    let h = init_hidden(&mut tape, a, b, Some(proj)).unwrap();
    assert_eq!(tape.shape(h).channels, 6);
    assert!(tape.value(h).data().iter().all(|v| v.abs() < 1.0));

    let odd = tape.leaf(Tensor::zeros(Shape::new(1, H + 1, W)));
    assert!(init_hidden(&mut tape, a, odd, None).is_err());
}

fn inputs_on(tape: &mut Tape, seed: u64, ctx: usize) -> RefinementInputs {
    RefinementInputs {
        d1: tape.leaf(map(seed, 1.0, 3.0, 1)),
        d2: tape.leaf(map(seed + 1, 1.0, 3.0, 1)),
        u1: tape.leaf(map(seed + 2, 0.0, 1.0, 1)),
        u2: tape.leaf(map(seed + 3, 0.0, 1.0, 1)),
        dif: tape.leaf(map(seed + 4, 0.0, 1.0, 1)),
        context: tape.leaf(map(seed + 5, -1.0, 1.0, ctx)),
    }
}

#[test]
fn build_input_zero_maps_pass_context_through() {
    let config = small_config();
    let w = RefinementWeights::random(&config, 6, 4).unwrap();
    let mut tape = Tape::new();
    let v = w.bind(&mut tape);
    let zero = tape.leaf(Tensor::zeros(Shape::new(1, H, W)));
    let ctx = map(5, -1.0, 1.0, 2);
    let context = tape.leaf(ctx.clone());
    let r = RefinementInputs { d1: zero, d2: zero, u1: zero, u2: zero, dif: zero, context };
    let i = build_input(&mut tape, &r, &v.proj1, &v.proj2).unwrap();
    let out = tape.value(i);
    assert_eq!(out.shape(), Shape::new(4, H, W));
    assert!(out.data()[..2 * H * W].iter().all(|x| *x == 0.0));
    assert_eq!(&out.data()[2 * H * W..], ctx.data());

    let bad = tape.leaf(Tensor::zeros(Shape::new(2, H, W)));
    let r = RefinementInputs { d1: bad, ..r };
    assert!(build_input(&mut tape, &r, &v.proj1, &v.proj2).is_err());
}

#[test]
fn build_input_gradient_wrt_d1() {
    let config = small_config();
    let w = RefinementWeights::random(&config, 6, 6).unwrap();
    let err = finite_diff_check(
        |t, d1| {
            let v = w.bind(t);
            let r = RefinementInputs { d1, ..inputs_on(t, 7, 2) };
            let i = build_input(t, &r, &v.proj1, &v.proj2)?;
            let sq = t.mul(i, i)?;
            t.sum(sq)
        },
        &map(8, 1.0, 3.0, 1),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

fn gru_case(bias: Option<f64>, seed: u64) -> (Tensor, Tensor, Tensor, Tensor) {
    let mut r = rng(seed);
    let mut g = GruWeights::random(3, 4, 1.0, &mut r);
    if let Some(b) = bias {
        g.z.bias = Tensor::full(g.z.bias.shape(), b);
    }
    let mut tape = Tape::new();
    let h = tape.leaf(Tensor::random_uniform(Shape::new(3, H, W), -0.9, 0.9, &mut r));
    let i = tape.leaf(Tensor::random_uniform(Shape::new(4, H, W), -2.0, 2.0, &mut r));
    let v = g.bind(&mut tape);
    let step = conv_gru_step_detailed(&mut tape, h, i, &v).unwrap();
    (
        tape.value(h).clone(),
        tape.value(step.h).clone(),
        tape.value(step.candidate).clone(),
        tape.value(step.z).clone(),
    )
}

#[test]
fn closed_update_gate_keeps_hidden() {
    for seed in 0..3 {
        let (h, next, _, z) = gru_case(Some(-60.0), seed);
        assert!(z.max() < 1e-20);
        assert!(h.max_abs_diff(&next) < 1e-6);
    }
}

#[test]
fn open_update_gate_takes_candidate() {
    for seed in 0..3 {
        let (_, next, cand, z) = gru_case(Some(60.0), seed);
        assert!(1.0 - z.min() < 1e-20);
        assert!(cand.max_abs_diff(&next) < 1e-6);
    }
}

#[test]
fn gru_step_gradients_all_inputs() {
    for seed in 0..3 {
        let mut r = rng(100 + seed);
        let g = GruWeights::random(3, 4, 1.0, &mut r);
        let mut inputs = vec![
            Tensor::random_uniform(Shape::new(3, H, W), -0.9, 0.9, &mut r),
            Tensor::random_uniform(Shape::new(4, H, W), -2.0, 2.0, &mut r),
        ];
        for s in [&g.z, &g.r, &g.h] {
            inputs.extend(s.tensors().into_iter().cloned());
        }
        // nonzero gate biases so the bias gradients are exercised off zero
        for k in [4, 7, 10] {
            inputs[k] = Tensor::random_uniform(inputs[k].shape(), -0.5, 0.5, &mut r);
        }
        let errs = finite_diff_check_inputs(
            |t, v| {
                let gv = GruVars {
                    z: SepConvVars { depthwise: v[2], pointwise: v[3], bias: v[4] },
                    r: SepConvVars { depthwise: v[5], pointwise: v[6], bias: v[7] },
                    h: SepConvVars { depthwise: v[8], pointwise: v[9], bias: v[10] },
                };
                let h = conv_gru_step(t, v[0], v[1], &gv)?;
                t.sum(h)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert_eq!(errs.len(), 11);
        for e in errs {
            assert!(e < 1e-6, "{e}");
        }
    }
}

#[test]
fn hidden_stays_bounded_over_ten_iterations() {
    let config = small_config();
    for seed in 0..3 {
        let w = RefinementWeights::random(&config, 6, seed).unwrap();
        let mut tape = Tape::new();
        let v = w.bind(&mut tape);
        let r = inputs_on(&mut tape, 20 + seed, 2);
        let mut h = tape.leaf(map(30 + seed, -0.99, 0.99, 3));
        for _ in 0..10 {
            let i = build_input(&mut tape, &r, &v.proj1, &v.proj2).unwrap();
            h = conv_gru_step(&mut tape, h, i, &v.gru).unwrap();
            assert!(tape.value(h).data().iter().all(|x| x.abs() < 1.0));
        }
    }
}

#[test]
fn update_head_zero_and_linear() {
    let mut tape = Tape::new();
    let zero_h = tape.leaf(Tensor::zeros(Shape::new(3, H, W)));
    let mut r = rng(40);
    let head1 = SepConvWeights::random(3, 1, 1.0, &mut r).bind(&mut tape);
    let head2 = SepConvWeights::random(3, 1, 1.0, &mut r).bind(&mut tape);
    let (a, b) = depth_update_head(&mut tape, zero_h, &head1, &head2).unwrap();
    assert!(tape.value(a).data().iter().chain(tape.value(b).data()).all(|x| *x == 0.0));

    let hv = map(41, -1.0, 1.0, 3);
    let h = tape.leaf(hv.clone());
    let h2 = tape.leaf(hv.scaled(2.0));
    let (a, b) = depth_update_head(&mut tape, h, &head1, &head2).unwrap();
    let (a2, b2) = depth_update_head(&mut tape, h2, &head1, &head2).unwrap();
    assert!(tape.value(a).scaled(2.0).max_abs_diff(tape.value(a2)) < 1e-12);
    assert!(tape.value(b).scaled(2.0).max_abs_diff(tape.value(b2)) < 1e-12);
}

#[test]
fn update_head_gradient_into_silog() {
    let gt = DepthMap::all_valid(Grid::from_vec(W, H, map(50, 1.0, 3.0, 1).into_vec()).unwrap());
    let mask = Grid::filled(W, H, true);
    let base = map(51, 1.0, 3.0, 1);
    let head = SepConvWeights::random(3, 1, 0.3, &mut rng(52));
    let errs = finite_diff_check_inputs(
        |t, v| {
            let h = t.tanh(v[0])?;
            let hv = SepConvVars { depthwise: v[1], pointwise: v[2], bias: v[3] };
            let (d, _) = depth_update_head(t, h, &hv, &hv)?;
            let b = t.constant(base.clone());
            let depth = t.add(b, d)?;
            silog_loss(t, depth, &gt, &mask, 10.0, 0.85)
        },
        &[map(53, -1.0, 1.0, 3), head.depthwise, head.pointwise, Tensor::full(Shape::new(1, 1, 1), 0.1)],
        1e-5,
    )
    .unwrap();
    assert!(errs.iter().all(|e| *e < 1e-6), "{errs:?}");
}

fn run_refine(w: &RefinementWeights, t_max: usize, d1: &Tensor, d2: &Tensor) -> (Tape, RefinementTrace) {
    let mut tape = Tape::new();
    let v = w.bind(&mut tape);
    let a = tape.leaf(d1.clone());
    let b = tape.leaf(d2.clone());
    let u1 = tape.leaf(map(60, 0.0, 1.0, 1));
    let u2 = tape.leaf(map(61, 0.0, 1.0, 1));
    let ctx = tape.leaf(map(62, -1.0, 1.0, w.context_channels()));
    let h0 = tape.leaf(map(63, -0.5, 0.5, w.hidden_channels()));
    let trace = refine(&mut tape, a, b, u1, u2, ctx, h0, &v, t_max, DEFAULT_MIN_DEPTH).unwrap();
    (tape, trace)
}

#[test]
fn zero_update_head_is_identity() {
    let config = small_config();
    let w = RefinementWeights::random(&config, 3, 70).unwrap();
    let (d1, d2) = (map(71, 0.5, 4.0, 1), map(72, 0.5, 4.0, 1));
    for t_max in [1, 3, 5] {
        let (tape, trace) = run_refine(&w, t_max, &d1, &d2);
        assert_eq!(trace.d1.len(), t_max);
        assert_eq!(trace.d2.len(), t_max);
        let (a, b) = trace.final_depths();
        assert_eq!(tape.value(a), &d1);
        assert_eq!(tape.value(b), &d2);
    }
}

#[test]
fn bias_only_update_is_linear_in_iterations() {
    let config = small_config();
    let mut w = RefinementWeights::random(&config, 3, 80).unwrap();
    let (c1, c2) = (0.125, -0.0625);
    w.head1.bias = Tensor::full(w.head1.bias.shape(), c1);
    w.head2.bias = Tensor::full(w.head2.bias.shape(), c2);
    let (d1, d2) = (map(81, 1.0, 4.0, 1), map(82, 1.0, 4.0, 1));
    let (tape, trace) = run_refine(&w, 4, &d1, &d2);
    for t in 0..4 {
        let k = (t + 1) as f64;
        let e1 = Tensor::from_fn(d1.shape(), |c, y, x| d1.get(c, y, x) + k * c1);
        let e2 = Tensor::from_fn(d2.shape(), |c, y, x| d2.get(c, y, x) + k * c2);
        assert!(tape.value(trace.d1[t]).max_abs_diff(&e1) < 1e-12);
        assert!(tape.value(trace.d2[t]).max_abs_diff(&e2) < 1e-12);
    }
}

#[test]
fn refine_rejects_zero_iterations() {
    let w = RefinementWeights::random(&small_config(), 3, 1).unwrap();
    let mut tape = Tape::new();
    let v = w.bind(&mut tape);
    let x = tape.leaf(map(1, 1.0, 2.0, 1));
    let c = tape.leaf(map(2, 1.0, 2.0, 2));
    let h = tape.leaf(map(3, 0.0, 0.5, 3));
    assert!(refine(&mut tape, x, x, x, x, c, h, &v, 0, 1e-3).is_err());
}

#[test]
fn fuse_constant_and_symmetric() {
    let two = Tensor::full(Shape::new(1, 3, 4), 2.0);
    let one = Tensor::full(Shape::new(1, 3, 4), 1.0);
    let three = Tensor::full(Shape::new(1, 3, 4), 3.0);
    for out in [fuse(&two, &two, 12, 16).unwrap(), fuse(&one, &three, 12, 16).unwrap()] {
        assert_eq!(out.dims(), (16, 12));
        assert!(out.values.as_slice().iter().all(|v| (v - 2.0).abs() < 1e-15));
    }
    let a = Tensor::random_uniform(Shape::new(1, 3, 4), 0.5, 3.0, &mut rng(90));
    let b = Tensor::random_uniform(Shape::new(1, 3, 4), 0.5, 3.0, &mut rng(91));
    assert_eq!(fuse(&a, &b, 12, 16).unwrap(), fuse(&b, &a, 12, 16).unwrap());
    assert!(fuse(&a, &Tensor::zeros(Shape::new(1, 2, 4)), 12, 16).is_err());

    let mut tape = Tape::new();
    let (va, vb) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
    let f = fuse_var(&mut tape, va, vb, 12, 16).unwrap();
    assert_eq!(tape.value(f).data(), fuse(&a, &b, 12, 16).unwrap().values.as_slice());
}

#[test]
fn named_round_trip_and_validation() {
    let w = random_head_weights(&small_config(), 5);
    let mut with_init = RefinementWeights::random(&small_config(), 8, 6).unwrap();
    with_init.head1.bias = Tensor::full(Shape::new(1, 1, 1), 0.5);
    for original in [w, with_init] {
        let named: Vec<(String, Tensor)> =
            original.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let mut shuffled = named.clone();
        shuffled.reverse();
        assert_eq!(RefinementWeights::from_named(shuffled).unwrap(), original);
        let mut missing = named.clone();
        missing.remove(3);
        assert!(RefinementWeights::from_named(missing).is_err());
        let mut extra = named;
        extra.push(("junk".into(), Tensor::scalar(1.0)));
        assert!(RefinementWeights::from_named(extra).is_err());
    }
}

#[test]
fn tensors_mut_matches_named_order() {
    let mut w = RefinementWeights::random(&small_config(), 8, 7).unwrap();
    let shapes: Vec<Shape> = w.named().iter().map(|(_, t)| t.shape()).collect();
    let mut_shapes: Vec<Shape> = w.tensors_mut().iter().map(|t| t.shape()).collect();
    assert_eq!(shapes, mut_shapes);
    let mut tape = Tape::new();
    let vars = w.bind(&mut tape).vars();
    let bound: Vec<Shape> = vars.iter().map(|v| tape.shape(*v)).collect();
    assert_eq!(shapes, bound);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gru_update_is_convex_combination(seed in any::<u64>(), zb in -3.0f64..3.0) {
        let mut r = rng(seed);
        let mut g = GruWeights::random(2, 3, 1.5, &mut r);
        g.z.bias = Tensor::full(g.z.bias.shape(), zb);
        let mut tape = Tape::new();
        let h = tape.leaf(Tensor::random_uniform(Shape::new(2, 4, 5), -0.999, 0.999, &mut r));
        let i = tape.leaf(Tensor::random_uniform(Shape::new(3, 4, 5), -r.gen_range(0.0..4.0), 4.0, &mut r));
        let v = g.bind(&mut tape);
        let s = conv_gru_step_detailed(&mut tape, h, i, &v).unwrap();
        let (hv, cv, nv) = (tape.value(h).data(), tape.value(s.candidate).data(), tape.value(s.h).data());
        for k in 0..nv.len() {
            let (lo, hi) = (hv[k].min(cv[k]), hv[k].max(cv[k]));
            prop_assert!(nv[k] >= lo - 1e-15 && nv[k] <= hi + 1e-15);
            prop_assert!(nv[k].abs() < 1.0);
        }
    }
}
