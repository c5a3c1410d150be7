use super::*;
use crate::data::mirror;
use crate::model::{ClassifierSettings, Model, ModelConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn randn(seed: u64, shape: &[usize]) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap()
}

/// input 9 (a 3×3 image), d = 4, 3 classes.
fn toy_model(seed: u64) -> Model {
    let cfg = ModelConfig {
        input_dim: 9,
        hidden: vec![6],
        embed_dim: 4,
        num_classes: 3,
        classifier: ClassifierSettings::default(),
    };
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Model::new(&cfg, &mut r);
    m.attach_head(Some(3), &mut r);
    // non-zero output bias keeps head rows away from the zero vector even
    // when every hidden unit is inactive
    let bias = m.params.find("head.1.bias").unwrap();
    *m.params.get_mut(bias) = randn(seed + 100, &[4]);
    m
}

fn mirror_rows(x: &Tensor) -> Tensor {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let side = (d as f64).sqrt() as usize;
    let data = (0..n).flat_map(|i| mirror(x.row(i), side)).collect();
    Tensor::new(vec![n, d], data).unwrap()
}

fn toy_batch(seed: u64, ks: usize, kt: usize) -> Batch {
    let source = randn(seed, &[ks, 9]);
    let target = randn(seed + 1, &[kt, 9]);
    Batch {
        source_mirror: mirror_rows(&source),
        source_labels: (0..ks).map(|i| i % 3).collect(),
        target_mirror: mirror_rows(&target),
        source,
        target,
    }
}

fn probs_graph(rows: &[Vec<f64>]) -> (Graph, Var) {
    let mut g = Graph::new();
    let p = g.param(Tensor::from_rows(rows));
    (g, p)
}

#[test]
fn focal_examples() {
    let (mut g, p) = probs_graph(&[vec![1.0, 0.0]]);
    let l = focal_ce(&mut g, p, &[0], 2.0).unwrap();
    assert_eq!(g.value(l).item(), 0.0);

    let (mut g, p) = probs_graph(&[vec![0.5, 0.5]]);
    let l = focal_ce(&mut g, p, &[1], 0.0).unwrap();
    assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);

    let (mut g, p) = probs_graph(&[vec![0.9, 0.1]]);
    let l = focal_ce(&mut g, p, &[0], 2.0).unwrap();
    let expected = 0.1f64.powi(2) * -(0.9f64.ln());
    assert!((g.value(l).item() - expected).abs() < 1e-15);
    assert!((g.value(l).item() - 1.05361e-3).abs() < 1e-8);
}

#[test]
fn focal_zero_probability_is_floored() {
    let (mut g, p) = probs_graph(&[vec![0.0, 1.0]]);
    let l = focal_ce(&mut g, p, &[0], 0.0).unwrap();
    assert!((g.value(l).item() + PROB_FLOOR.ln()).abs() < 1e-9);
    assert!(g.backward(l).unwrap().wrt(p).all_finite());
}

#[test]
fn focal_rejects_bad_input() {
    let (mut g, p) = probs_graph(&[vec![0.5, 0.6]]);
    assert!(matches!(focal_ce(&mut g, p, &[0], 2.0), Err(LossError::Contract(_))));
    let (mut g, p) = probs_graph(&[vec![0.5, 0.5]]);
    assert!(matches!(focal_ce(&mut g, p, &[2], 2.0), Err(LossError::Contract(_))));
    assert!(matches!(focal_ce(&mut g, p, &[0, 1], 2.0), Err(LossError::Contract(_))));
}

#[test]
fn neg_cosine_examples() {
    let mut g = Graph::new();
    let p = g.constant(Tensor::from_rows(&[vec![2.0, -1.0, 3.0]]));
    let d = neg_cosine(&mut g, p, p).unwrap();
    assert!((g.value(d).item() + 1.0).abs() < 1e-15);

    let a = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]));
    let b = g.constant(Tensor::from_rows(&[vec![0.0, 2.0], vec![-1.0, 0.0]]));
    let d = neg_cosine(&mut g, a, b).unwrap();
    assert_eq!(g.value(d).item(), 0.0);

    let p = g.constant(Tensor::from_rows(&[vec![1.0, 0.0]]));
    let z = g.constant(Tensor::from_rows(&[vec![1.0, 1.0]]));
    let d = neg_cosine(&mut g, p, z).unwrap();
    assert!((g.value(d).item() + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);

    let zero = g.constant(Tensor::from_rows(&[vec![0.0, 0.0]]));
    assert!(neg_cosine(&mut g, p, zero).is_err());
}

#[test]
fn symmetric_loss_of_identical_branches_is_minus_one() {
    // mirror = identity and h = identity: every argument is the same z
    let mut g = Graph::new();
    let z = g.param(randn(3, &[5, 4]));
    let l = symmetric_stop_gradient(&mut g, z, z, z, z).unwrap();
    assert!((g.value(l).item() + 1.0).abs() < 1e-15);
}

#[test]
fn focal_zero_gamma_plus_trivial_simsiam_is_ce_minus_one() {
    let mut g = Graph::new();
    let logits = g.constant(randn(4, &[4, 3]));
    let probs = g.softmax_rows(logits).unwrap();
    let labels = [0, 2, 1, 1];
    let ce = focal_ce(&mut g, probs, &labels, 0.0).unwrap();
    let z = g.constant(randn(5, &[4, 4]));
    let ls = symmetric_stop_gradient(&mut g, z, z, z, z).unwrap();
    let total = g.add(ce, ls).unwrap();
    let p = g.value(probs);
    let plain: f64 = labels.iter().enumerate().map(|(i, &l)| -p.row(i)[l].ln()).sum::<f64>() / 4.0;
    assert!((g.value(total).item() - (plain - 1.0)).abs() < 1e-12);
}

#[test]
fn fully_stopped_simsiam_has_zero_gradient() {
    let mut m = toy_model(1);
    let x = randn(2, &[4, 9]);
    let mut s = m.session();
    let xv = s.input(x.clone());
    let xm = s.input(mirror_rows(&x));
    let l = simsiam_loss_fully_stopped(&mut s, xv, xm).unwrap();
    for grad in s.param_grads(l).unwrap() {
        assert!(grad.data().iter().all(|v| v.to_bits() == 0));
    }
}

#[test]
fn simsiam_is_symmetric_under_swap() {
    let x = randn(7, &[6, 9]);
    let xm = mirror_rows(&x);
    let eval = |a: &Tensor, b: &Tensor| {
        let mut m = toy_model(2);
        let mut s = m.session();
        let av = s.input(a.clone());
        let bv = s.input(b.clone());
        let l = simsiam_loss(&mut s, av, bv).unwrap();
        s.graph.value(l).item()
    };
    let (l1, l2) = (eval(&x, &xm), eval(&xm, &x));
    assert!((l1 - l2).abs() < 1e-12, "{l1} vs {l2}");
    assert!((-1.0..=1.0).contains(&l1));
}

#[test]
fn simsiam_never_touches_classifier() {
    let mut m = toy_model(3);
    let cls = m.classifier.weight;
    let x = randn(8, &[4, 9]);
    let mut s = m.session();
    let xv = s.input(x.clone());
    let xm = s.input(mirror_rows(&x));
    let l = simsiam_loss(&mut s, xv, xm).unwrap();
    let grads = s.param_grads(l).unwrap();
    assert!(grads[cls.0].data().iter().all(|v| v.to_bits() == 0));
    // the embedding still learns through the unstopped head branches
    assert!(grads.iter().any(|g| g.data().iter().any(|&v| v != 0.0)));
}

fn adapt_value(rho: f64) -> (f64, f64, f64) {
    let batch = toy_batch(10, 4, 5);
    let mut m = toy_model(4);
    let mut s = m.session();
    let t = adapting_loss(&mut s, &batch, rho).unwrap();
    let v = |x: Var| s.graph.value(x).item();
    (v(t.value), v(t.source), v(t.target))
}

#[test]
fn adapting_loss_endpoints_and_affinity() {
    let (at0, src, tgt) = adapt_value(0.0);
    assert_eq!(at0.to_bits(), src.to_bits());
    let (at1, _, tgt1) = adapt_value(1.0);
    assert_eq!(at1.to_bits(), tgt1.to_bits());
    assert_eq!(tgt, tgt1);
    for rho in [0.25, 0.5, 0.6, 0.9] {
        let (v, _, _) = adapt_value(rho);
        assert!((v - ((1.0 - rho) * at0 + rho * at1)).abs() < 1e-12);
    }
    let (v, s, t) = adapt_value(0.6);
    assert!((v - (0.4 * s + 0.6 * t)).abs() < 1e-15);
}

#[test]
fn adapting_loss_validates_rho() {
    let batch = toy_batch(10, 4, 5);
    let mut m = toy_model(4);
    let mut s = m.session();
    assert!(matches!(adapting_loss(&mut s, &batch, 1.5), Err(LossError::Config(_))));
    assert!(matches!(adapting_loss(&mut s, &batch, -0.1), Err(LossError::Config(_))));
}

#[test]
fn total_gradient_is_sum_of_component_gradients() {
    let batch = toy_batch(20, 4, 4);
    let config = LossConfig::default();
    let grads_for = |objective| {
        let mut m = toy_model(5);
        let mut s = m.session();
        let terms = total_loss(&mut s, &batch, &config, objective).unwrap();
        let values = terms.values(&s.graph);
        (s.param_grads(terms.total).unwrap(), values)
    };
    let (full, v) = grads_for(Objective::Adapting);
    let (ce, _) = grads_for(Objective::Classification);
    let (la, _) = grads_for(Objective::AdaptingOnly);
    for ((f, c), a) in full.iter().zip(&ce).zip(&la) {
        for ((x, y), z) in f.data().iter().zip(c.data()).zip(a.data()) {
            assert!((x - (y + z)).abs() < 1e-10);
        }
    }
    assert!((v.total - (v.classification + v.adapt)).abs() < 1e-10);
    assert!((v.adapt - (0.4 * v.simsiam_source + 0.6 * v.simsiam_target)).abs() < 1e-12);
}

#[test]
fn rho_zero_without_target_is_source_only() {
    let mut batch = toy_batch(30, 4, 4);
    batch.target = Tensor::zeros(&[0, 9]);
    batch.target_mirror = Tensor::zeros(&[0, 9]);
    let config = LossConfig { rho: 0.0, ..LossConfig::default() };
    let mut m = toy_model(6);
    let mut s = m.session();
    let t = total_loss(&mut s, &batch, &config, Objective::Adapting).unwrap();
    let v = t.values(&s.graph);
    assert_eq!(v.total, v.classification + v.simsiam_source);
    assert_eq!(v.simsiam_target, 0.0);
    let bad = LossConfig { rho: 0.5, ..config };
    assert!(total_loss(&mut s, &batch, &bad, Objective::Adapting).is_err());
}

/// Backward gradient of `build` against central differences of `oracle`
/// over every model parameter.
fn fd_check(
    build: impl Fn(&mut Session<'_>) -> Var,
    oracle: impl Fn(&mut Session<'_>) -> Var,
    model: &Model,
) -> f64 {
    let mut m = model.clone();
    let analytic = {
        let mut s = m.session();
        let l = build(&mut s);
        s.param_grads(l).unwrap()
    };
    let h = 1e-5;
    let eval = |m: &mut Model| {
        let mut s = m.session();
        let l = oracle(&mut s);
        s.graph.value(l).item()
    };
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for id in model.params.ids() {
        for k in 0..model.params.get(id).len() {
            let mut plus = model.clone();
            plus.params.get_mut(id).data_mut()[k] += h;
            let mut minus = model.clone();
            minus.params.get_mut(id).data_mut()[k] -= h;
            let num = (eval(&mut plus) - eval(&mut minus)) / (2.0 * h);
            let a = analytic[id.0].data()[k];
            diff += (num - a).powi(2);
            na += a * a;
            nn += num * num;
        }
    }
    diff.sqrt() / (na.sqrt() + nn.sqrt()).max(1e-12)
}

#[test]
fn simsiam_gradient_matches_finite_differences() {
    // The oracle differentiates the same loss with the stopped embeddings
    // replaced by constants frozen at the base parameters.
    let model = toy_model(9);
    let x = randn(11, &[2, 9]);
    let xm = mirror_rows(&x);
    let frozen = {
        let mut m = model.clone();
        let mut s = m.session();
        let a = s.input(x.clone());
        let b = s.input(xm.clone());
        let z = s.embed(a, Mode::Train).unwrap();
        let zm = s.embed(b, Mode::Train).unwrap();
        (s.graph.value(z).clone(), s.graph.value(zm).clone())
    };
    let err = fd_check(
        |s| {
            let a = s.input(x.clone());
            let b = s.input(xm.clone());
            simsiam_loss(s, a, b).unwrap()
        },
        |s| {
            let a = s.input(x.clone());
            let b = s.input(xm.clone());
            let z = s.embed(a, Mode::Train).unwrap();
            let zm = s.embed(b, Mode::Train).unwrap();
            let p = s.head(z, Mode::Train).unwrap();
            let pm = s.head(zm, Mode::Train).unwrap();
            let zc = s.input(frozen.0.clone());
            let zmc = s.input(frozen.1.clone());
            let d1 = neg_cosine(&mut s.graph, pm, zc).unwrap();
            let d2 = neg_cosine(&mut s.graph, p, zmc).unwrap();
            let sum = s.graph.add(d1, d2).unwrap();
            s.graph.scale(sum, 0.5)
        },
        &model,
    );
    assert!(err < 1e-4, "relative error {err}");
}

proptest! {
    #[test]
    fn neg_cosine_is_scale_invariant(
        p in proptest::collection::vec(-5.0f64..5.0, 6),
        z in proptest::collection::vec(-5.0f64..5.0, 6),
        alpha in 0.01f64..100.0,
        beta in 0.01f64..100.0,
    ) {
        prop_assume!(p[..3].iter().any(|v| v.abs() > 1e-3) && p[3..].iter().any(|v| v.abs() > 1e-3));
        prop_assume!(z[..3].iter().any(|v| v.abs() > 1e-3) && z[3..].iter().any(|v| v.abs() > 1e-3));
        let mut g = Graph::new();
        let pv = g.constant(Tensor::new(vec![2, 3], p.clone()).unwrap());
        let zv = g.constant(Tensor::new(vec![2, 3], z.clone()).unwrap());
        let d = neg_cosine(&mut g, pv, zv).unwrap();
        let ps = g.constant(Tensor::new(vec![2, 3], p.iter().map(|v| v * alpha).collect()).unwrap());
        let zs = g.constant(Tensor::new(vec![2, 3], z.iter().map(|v| v * beta).collect()).unwrap());
        let ds = neg_cosine(&mut g, ps, zs).unwrap();
        prop_assert!((g.value(d).item() - g.value(ds).item()).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&g.value(d).item()));
    }

    #[test]
    fn focal_is_nonnegative_and_monotone(p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0, gamma in 0.0f64..5.0) {
        let eval = |p: f64| {
            let (mut g, v) = probs_graph(&[vec![p, 1.0 - p]]);
            let l = focal_ce(&mut g, v, &[0], gamma).unwrap();
            g.value(l).item()
        };
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        prop_assert!(eval(lo) >= 0.0 && eval(hi) >= 0.0);
        prop_assert!(eval(hi) <= eval(lo) + 1e-15);
    }

    #[test]
    fn focal_gamma_zero_is_cross_entropy(logits in proptest::collection::vec(-4.0f64..4.0, 12), seed in 0usize..3) {
        let mut g = Graph::new();
        let l = g.constant(Tensor::new(vec![4, 3], logits).unwrap());
        let probs = g.softmax_rows(l).unwrap();
        let labels: Vec<usize> = (0..4).map(|i| (i + seed) % 3).collect();
        let loss = focal_ce(&mut g, probs, &labels, 0.0).unwrap();
        let p = g.value(probs);
        let ce = labels.iter().enumerate().map(|(i, &y)| -p.row(i)[y].ln()).sum::<f64>() / 4.0;
        prop_assert!((g.value(loss).item() - ce).abs() < 1e-12);
    }
}
