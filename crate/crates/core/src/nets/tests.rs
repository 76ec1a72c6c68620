use super::*;
use crate::graph::Graph;

fn ci(size: usize) -> ArchConfig {
    ArchConfig::ci().with_chip_size(size)
}

fn image(n: usize, size: usize, phase: f64) -> Tensor<f64> {
    let len = n * 2 * size * size;
    let data = (0..len).map(|i| ((i as f64) * 0.37 + phase).sin()).collect();
    Tensor::from_vec(&[n, 2, size, size], data).unwrap()
}

/// Initialised weights with a random output layer, as after some training.
fn warm(arch: &ArchConfig, seed: u64) -> Stage1Params<f64> {
    let mut p = Stage1Params::<f64>::init(arch, seed).unwrap();
    p.head.init_uniform(seed + 100);
    p
}

#[test]
fn fresh_head_is_neutral() {
    let p = Stage1Params::<f64>::init(&ci(16), 3).unwrap();
    assert!(p.forward(&image(2, 16, 0.0), &image(2, 16, 1.0)).unwrap().iter().all(|&l| l == 0.0));
    let w = warm(&ci(16), 3);
    assert!(w.forward(&image(1, 16, 0.0), &image(1, 16, 1.0)).unwrap()[0] != 0.0);
}

#[test]
fn residual_branches_start_as_identities() {
    let p = Stage1Params::<f64>::init(&ci(16), 3).unwrap();
    let mut zeroed = 0;
    for (name, t) in p.encoder.names().iter().zip(p.encoder.tensors()) {
        let all_zero = t.data().iter().all(|&v| v == 0.0);
        if name.starts_with("enc") && name.ends_with("conv2.weight") {
            assert!(all_zero, "{name}");
            zeroed += 1;
        } else if name.ends_with(".weight") {
            assert!(!all_zero, "{name}");
        }
    }
    assert_eq!(zeroed, ci(16).blocks_per_stage.iter().sum::<usize>());
}

#[test]
fn head_units_below_zero_still_pass_gradient() {
    let mut g = Graph::<f64>::new();
    let x = Tensor::from_vec(&[1, 3], vec![-2.0, 0.5, -0.1]).unwrap();
    let xv = g.param(&x);
    let y = g.leaky_relu(xv, HEAD_SLOPE);
    assert_eq!(g.value(y).data(), &[-2.0 * HEAD_SLOPE, 0.5, -0.1 * HEAD_SLOPE]);
    let grads = g.backward(y, Tensor::from_vec(&[1, 3], vec![1.0; 3]).unwrap()).unwrap();
    assert_eq!(grads.get(xv).unwrap().data(), &[HEAD_SLOPE, 1.0, HEAD_SLOPE]);
}

#[test]
fn stage1_shapes() {
    for size in [16, 32] {
        let arch = ci(size);
        let p = Stage1Params::<f64>::init(&arch, 3).unwrap();
        let e = p.embed(&image(1, size, 0.0).index0(0)).unwrap();
        assert_eq!(e.shape(), [arch.embedding(), size, size]);
        let eb = p.embed(&image(3, size, 0.0)).unwrap();
        assert_eq!(eb.shape(), [3, arch.embedding(), size, size]);
        let logits = p.forward(&image(3, size, 0.0), &image(3, size, 1.0)).unwrap();
        assert_eq!(logits.len(), 3);
    }
}

#[test]
fn stage1_rejects_bad_input() {
    let p = Stage1Params::<f64>::init(&ci(16), 3).unwrap();
    assert!(matches!(p.embed(&image(1, 32, 0.0)), Err(Error::Shape(_))));
    let mut x = image(1, 16, 0.0);
    x.data_mut()[5] = f64::NAN;
    assert!(matches!(p.embed(&x), Err(Error::Data(_))));
    assert!(p.forward(&image(2, 16, 0.0), &image(1, 16, 0.0)).is_err());
}

#[test]
fn embeddings_depend_on_input() {
    let p = Stage1Params::<f64>::init(&ci(16), 5).unwrap();
    let a = p.embed(&image(1, 16, 0.0)).unwrap();
    let b = p.embed(&image(1, 16, 2.0)).unwrap();
    assert_ne!(a, b);
}

#[test]
fn head_composes_with_embed() {
    let p = warm(&ci(16), 7);
    let (pre, post) = (image(2, 16, 0.0), image(2, 16, 0.5));
    let direct = p.forward(&pre, &post).unwrap();
    let composed = p.head_logits(&p.embed(&pre).unwrap(), &p.embed(&post).unwrap()).unwrap();
    assert_eq!(direct, composed);
}

#[test]
fn batch_matches_single() {
    let p = Stage1Params::<f64>::init(&ci(16), 7).unwrap();
    let batch = image(3, 16, 0.1);
    let e = p.embed(&batch).unwrap();
    for i in 0..3 {
        let single = p.embed(&batch.index0(i)).unwrap();
        for (a, b) in single.data().iter().zip(e.index0(i).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn siamese_branches_share_weights() {
    // Each encoder tensor gets gradient contributions from both branches.
    let p = warm(&ci(16), 11);
    let (pre, post) = (image(1, 16, 0.0), image(1, 16, 0.9));
    let mut g = Graph::new();
    let ev = p.encoder.bind(&mut g, true);
    let hv = p.head.bind(&mut g, true);
    let a = g.constant(pre.clone());
    let b = g.constant(post.clone());
    let ea = p.embed_graph(&mut g, &ev, a).unwrap();
    let eb = p.embed_graph(&mut g, &ev, b).unwrap();
    let out = p.head_graph(&mut g, &hv, ea, eb).unwrap();
    let grads = g.backward(out, Tensor::from_vec(&[1, 1], vec![1.0]).unwrap()).unwrap();
    // finite difference on one stem weight, perturbing the shared tensor
    let idx = 4;
    let h = 1e-6;
    let eval = |delta: f64| {
        let mut q = p.clone();
        q.encoder.tensors_mut()[0].data_mut()[idx] += delta;
        q.forward(&pre, &post).unwrap()[0]
    };
    let fd = (eval(h) - eval(-h)) / (2.0 * h);
    let an = grads.get(ev[0]).unwrap().data()[idx];
    assert!(fd.abs() > 1e-6, "derivative vanished");
    assert!((fd - an).abs() <= 1e-5 * fd.abs().max(1e-3), "fd {fd} analytic {an}");
}

#[test]
fn init_is_deterministic() {
    let a = Stage1Params::<f32>::init(&ci(16), 1).unwrap();
    let b = Stage1Params::<f32>::init(&ci(16), 1).unwrap();
    let c = Stage1Params::<f32>::init(&ci(16), 2).unwrap();
    assert_eq!(a.encoder.digest(), b.encoder.digest());
    assert_ne!(a.encoder.digest(), c.encoder.digest());
    let s2a = Stage2Params::<f32>::init(&ci(16), true, 1).unwrap();
    let s2b = Stage2Params::<f32>::init(&ci(16), true, 1).unwrap();
    assert_eq!(s2a, s2b);
}

#[test]
fn stage2_shapes_and_contract() {
    let arch = ci(16);
    let e = arch.embedding();
    let base = Stage2Params::<f64>::init(&arch, false, 1).unwrap();
    let fused = Stage2Params::<f64>::init(&arch, true, 1).unwrap();
    let (pre, post) = (image(2, 16, 0.0), image(2, 16, 0.4));
    assert_eq!(base.forward(&pre, &post, None).unwrap().shape(), [2, 16, 16]);
    assert_eq!(base.forward(&pre.index0(0), &post.index0(0), None).unwrap().shape(), [16, 16]);
    let emb = Tensor::zeros(&[2, e, 16, 16]);
    assert_eq!(fused.forward(&pre, &post, Some((&emb, &emb))).unwrap().shape(), [2, 16, 16]);
    assert!(matches!(fused.forward(&pre, &post, None), Err(Error::Precondition(_))));
    assert!(matches!(base.forward(&pre, &post, Some((&emb, &emb))), Err(Error::Precondition(_))));
    let wrong = Tensor::zeros(&[2, e + 1, 16, 16]);
    assert!(matches!(fused.forward(&pre, &post, Some((&wrong, &wrong))), Err(Error::Shape(_))));
}

#[test]
fn stage2_output_depends_on_embedding() {
    let arch = ci(16);
    let s1 = Stage1Params::<f64>::init(&arch, 2).unwrap();
    let s2 = Stage2Params::<f64>::init(&arch, true, 3).unwrap();
    let (pre, post) = (image(1, 16, 0.0), image(1, 16, 0.4));
    let ea = s1.embed(&pre).unwrap();
    let eb = s1.embed(&post).unwrap();
    let with = s2.forward(&pre, &post, Some((&ea, &eb))).unwrap();
    let zero = Tensor::zeros(ea.shape());
    let without = s2.forward(&pre, &post, Some((&zero, &zero))).unwrap();
    assert_ne!(with, without);
}

#[test]
fn full_scale_counts_in_band() {
    let arch = ArchConfig::full();
    let s1 = count_params(&Stage1Params::<f32>::zeros(&arch).unwrap());
    let s2 = count_params(&Stage2Params::<f32>::zeros(&arch, true).unwrap());
    let s2b = count_params(&Stage2Params::<f32>::zeros(&arch, false).unwrap());
    assert!((15_750_000..=26_250_000).contains(&s1), "{s1}");
    assert!((750_000..=1_250_000).contains(&s2), "{s2}");
    assert!((750_000..=1_250_000).contains(&s2b), "{s2b}");
}

#[test]
fn full_scale_embedding_shape() {
    let arch = ArchConfig::full();
    assert_eq!(arch.embedding(), 64);
    assert_eq!(arch.chip_size, 128);
}

#[test]
fn layout_checks_on_reload() {
    let arch = ci(16);
    let p = Stage1Params::<f32>::init(&arch, 1).unwrap();
    let again = Stage1Params::from_sets(&arch, p.encoder.clone(), p.head.clone()).unwrap();
    assert_eq!(again, p);
    assert!(Stage1Params::from_sets(&arch, p.head.clone(), p.head.clone()).is_err());
    assert!(matches!(init_params::<f32>(&arch, 3, 0), Err(Error::Config(_))));
}
