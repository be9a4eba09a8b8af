use nca_core::autodiff::{grad_check, Graph, Tensor};
use nca_core::data::{builtin_glyph, Dataset, ImageTargets, LabeledImages, VideoSequences};
use nca_core::metrics::predict;
use nca_core::nca::{
    embed_seed, Activation, CellState, ChannelLayout, ModelSpec, NcaModel, PerceptionSpec, Seed,
    UpdateSpec,
};
use nca_core::rng::stream;
use nca_core::training::{
    adamw_step, clip_global_norm, cosine_lr, l1_loss, median, mse_loss, overflow_loss, perturb_damage,
    perturb_halfplane, perturb_mutate, pixel_ce_loss, pixel_mse_loss, AdamWConfig, AdamWState, Axis,
    LossKind, PoolEntry, PoolSpec, SamplePool, Schedule, Side, TargetRef, TrainSpec, Trainer,
};
use proptest::prelude::*;

fn var_loss(
    f: impl Fn(&mut Graph<f64>, nca_core::autodiff::Var, nca_core::autodiff::Var) -> Result<nca_core::autodiff::Var, nca_core::autodiff::AutodiffError>,
    pred: &[f64],
    target: &[f64],
) -> f64 {
    let mut g = Graph::<f64>::new();
    let p = g.constant(Tensor::from_f64(&[pred.len()], pred).unwrap());
    let t = g.constant(Tensor::from_f64(&[target.len()], target).unwrap());
    let l = f(&mut g, p, t).unwrap();
    g.value(l).item()
}

#[test]
fn mse_and_l1_examples() {
    let target = [0.2, -0.5, 0.9, 0.0];
    assert_eq!(var_loss(mse_loss, &target, &target), 0.0);
    assert_eq!(var_loss(l1_loss, &target, &target), 0.0);
    let pred: Vec<f64> = target.iter().map(|v| v + 0.1).collect();
    assert!((var_loss(mse_loss, &pred, &target) - 0.01).abs() < 1e-12);
    assert!((var_loss(l1_loss, &pred, &target) - 0.1).abs() < 1e-12);
}

#[test]
fn mse_gradient_is_two_residual_over_n() {
    let pred = [0.3, -1.0, 2.5];
    let target = [0.0, 0.5, 2.0];
    let mut g = Graph::<f64>::new();
    let p = g.param(Tensor::from_f64(&[3], &pred).unwrap());
    let t = g.constant(Tensor::from_f64(&[3], &target).unwrap());
    let l = mse_loss(&mut g, p, t).unwrap();
    g.backward(l).unwrap();
    for i in 0..3 {
        let expect = 2.0 * (pred[i] - target[i]) / 3.0;
        assert!((g.grad(p).unwrap().data()[i] - expect).abs() < 1e-12);
    }
    let tt = Tensor::from_f64(&[3], &target).unwrap();
    let r = grad_check(
        |g, v| {
            let t = g.constant(tt.clone());
            mse_loss(g, v[0], t)
        },
        &[Tensor::from_f64(&[3], &pred).unwrap()],
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-6);
}

#[test]
fn loss_shape_mismatch_is_an_error() {
    let mut g = Graph::<f64>::new();
    let p = g.constant(Tensor::zeros(&[3]));
    let t = g.constant(Tensor::zeros(&[4]));
    assert!(mse_loss(&mut g, p, t).is_err());
    assert!(l1_loss(&mut g, p, t).is_err());
}

#[test]
fn pixel_ce_examples() {
    let mut g = Graph::<f64>::new();
    let c = g.constant(Tensor::zeros(&[1, 10, 3, 3]));
    let l = pixel_ce_loss(&mut g, c, &[4]).unwrap();
    assert!((g.value(l).item() - 10f64.ln()).abs() < 1e-12);
    assert!((10f64.ln() - 2.302585).abs() < 1e-6);
    assert!(pixel_ce_loss(&mut g, c, &[10]).is_err());

    let one = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
    assert!(pixel_ce_loss(&mut g, one, &[0]).is_err());
}

#[test]
fn pixel_ce_matches_per_pixel_softmax() {
    let (n, k, h, w) = (2, 3, 2, 3);
    let data: Vec<f64> = (0..n * k * h * w).map(|i| ((i * 37) % 17) as f64 / 4.0 - 2.0).collect();
    let labels = [2, 0];
    let mut g = Graph::<f64>::new();
    let c = g.constant(Tensor::from_f64(&[n, k, h, w], &data).unwrap());
    let l = pixel_ce_loss(&mut g, c, &labels).unwrap();
    let mut total = 0.0;
    for b in 0..n {
        for p in 0..h * w {
            let z: Vec<f64> = (0..k).map(|j| data[(b * k + j) * h * w + p]).collect();
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            total -= (z[labels[b]].exp() / denom).ln();
        }
    }
    assert!((g.value(l).item() - total / (n * h * w) as f64).abs() < 1e-10);
}

#[test]
fn perfect_one_hot_gives_zero_and_large_gap_drives_ce_to_zero() {
    let field = nca_core::training::one_hot_field::<f64>(&[1, 3], 4, 3, 3).unwrap();
    let mut g = Graph::<f64>::new();
    let c = g.constant(field.clone());
    let l = pixel_mse_loss(&mut g, c, &[1, 3]).unwrap();
    assert_eq!(g.value(l).item(), 0.0);

    let mut prev = f64::INFINITY;
    for gap in [1.0, 5.0, 20.0, 60.0] {
        let mut g = Graph::<f64>::new();
        let c = g.constant(field.map(|v| v * gap));
        let l = pixel_ce_loss(&mut g, c, &[1, 3]).unwrap();
        let v = g.value(l).item();
        assert!(v < prev);
        prev = v;
    }
    assert!(prev < 1e-20);
}

fn overflow_oracle(state: &Tensor<f64>, layout: &ChannelLayout) -> f64 {
    let (n, _, h, w) = state.dims4().unwrap();
    let hw = h * w;
    let c = layout.total();
    let mut vis = 0.0;
    let mut hid = 0.0;
    for b in 0..n {
        for ch in 0..c {
            for p in 0..hw {
                let v = state.data()[(b * c + ch) * hw + p];
                if ch >= layout.visible_start() && ch < layout.visible_start() + layout.visible {
                    vis += (v - 1.0).max(0.0) + (-v).max(0.0);
                } else if ch >= layout.hidden_start() && ch < layout.hidden_start() + layout.hidden {
                    hid += (v.abs() - 1.0).max(0.0);
                }
            }
        }
    }
    vis / (n * layout.visible * hw) as f64 + hid / (n * layout.hidden * hw) as f64
}

#[test]
fn overflow_examples() {
    let layout = ChannelLayout {
        visible: 3,
        hidden: 2,
        ..ChannelLayout::default()
    };
    let mut s = Tensor::<f64>::full(&[1, 5, 2, 2], 0.5);
    s.data_mut()[12..].iter_mut().for_each(|v| *v = -0.9);
    let eval = |s: &Tensor<f64>| {
        let mut g = Graph::new();
        let v = g.constant(s.clone());
        let l = overflow_loss(&mut g, v, &layout).unwrap();
        g.value(l).item()
    };
    assert_eq!(eval(&s), 0.0);
    s.data_mut()[0] = 1.5;
    let n_rgb = 3.0 * 4.0;
    assert!((eval(&s) - 0.5 / n_rgb).abs() < 1e-12);

    let mut rng = stream(1, "ov");
    use rand::Rng;
    let r = Tensor::new(&[2, 5, 3, 3], (0..90).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    assert!((eval(&r) - overflow_oracle(&r, &layout)).abs() < 1e-12);
}

/// Textbook AdamW written out for a single scalar.
fn adamw_reference(p0: f64, grads: &[f64], cfg: &AdamWConfig, lr: f64) -> f64 {
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for (i, &g) in grads.iter().enumerate() {
        let t = (i + 1) as i32;
        p -= lr * cfg.weight_decay * p;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mh = m / (1.0 - cfg.beta1.powi(t));
        let vh = v / (1.0 - cfg.beta2.powi(t));
        p -= lr * mh / (vh.sqrt() + cfg.eps);
    }
    p
}

#[test]
fn adamw_examples() {
    let cfg = AdamWConfig {
        weight_decay: 0.1,
        ..AdamWConfig::default()
    };
    let lr = 0.01;
    let mut p = vec![Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap()];
    let mut st = AdamWState::new(&p);
    adamw_step(&mut p, &[Tensor::zeros(&[3])], &mut st, &cfg, lr);
    let decay = 1.0 - lr * 0.1;
    for (a, b) in p[0].data().iter().zip([1.0, -2.0, 0.5]) {
        assert!((a - b * decay).abs() < 1e-15);
    }

    let cfg0 = AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    let orig = Tensor::<f64>::from_f64(&[2], &[0.3, -0.7]).unwrap();
    let mut p = vec![orig.clone()];
    let mut st = AdamWState::new(&p);
    adamw_step(&mut p, &[Tensor::zeros(&[2])], &mut st, &cfg0, 0.1);
    assert_eq!(p[0], orig);

    let grads = [0.4, 0.4, -1.3, 0.05, 2.0];
    let mut p = vec![Tensor::<f64>::from_f64(&[1], &[0.8]).unwrap()];
    let mut st = AdamWState::new(&p);
    for &gv in &grads {
        adamw_step(&mut p, &[Tensor::from_f64(&[1], &[gv]).unwrap()], &mut st, &cfg, lr);
    }
    assert!((p[0].data()[0] - adamw_reference(0.8, &grads, &cfg, lr)).abs() < 1e-12);

    // First step with a constant gradient moves by about lr in the sign direction.
    let mut p = vec![Tensor::<f64>::from_f64(&[2], &[0.0, 0.0]).unwrap()];
    let mut st = AdamWState::new(&p);
    adamw_step(&mut p, &[Tensor::from_f64(&[2], &[3.0, -0.2]).unwrap()], &mut st, &cfg0, lr);
    assert!((p[0].data()[0] + lr).abs() < 1e-8);
    assert!((p[0].data()[1] - lr).abs() < 1e-8);
}

#[test]
fn cosine_examples() {
    assert_eq!(cosine_lr(0, 100, 2e-3, 1e-4), 2e-3);
    assert!((cosine_lr(100, 100, 2e-3, 1e-4) - 1e-4).abs() < 1e-15);
    assert!((cosine_lr(50, 100, 2e-3, 1e-4) - (2e-3 + 1e-4) / 2.0).abs() < 1e-15);
    let spec = TrainSpec {
        schedule: Schedule::Constant,
        ..TrainSpec::default()
    };
    assert_eq!(spec.lr_at(500), spec.optimizer.lr);
}

#[test]
fn clip_examples() {
    let mut g = vec![Tensor::<f64>::from_f64(&[2], &[0.3, 0.4]).unwrap()];
    assert!((clip_global_norm(&mut g, 1.0) - 0.5).abs() < 1e-15);
    assert_eq!(g[0].data(), &[0.3, 0.4]);
    let mut g = vec![Tensor::<f64>::from_f64(&[2], &[3.0, 4.0]).unwrap()];
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-12 && (g[0].data()[1] - 0.8).abs() < 1e-12);
}

proptest! {
    #[test]
    fn clipping_bounds_norm_and_never_grows(
        a in prop::collection::vec(-50.0f64..50.0, 1..20),
        b in prop::collection::vec(-50.0f64..50.0, 1..20),
        max in 0.01f64..10.0,
    ) {
        let orig = vec![
            Tensor::<f64>::from_f64(&[a.len()], &a).unwrap(),
            Tensor::from_f64(&[b.len()], &b).unwrap(),
        ];
        let mut g = orig.clone();
        clip_global_norm(&mut g, max);
        let norm: f64 = g.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= max + 1e-6);
        for (x, y) in orig.iter().flat_map(|t| t.data()).zip(g.iter().flat_map(|t| t.data())) {
            prop_assert!(y.abs() <= x.abs() + 1e-15);
        }
    }

    #[test]
    fn damage_matches_disc_rasterisation(
        h in 1usize..20, w in 1usize..20,
        cx in -3.0f64..22.0, cy in -3.0f64..22.0, r in 0.1f64..12.0,
    ) {
        let layout = ChannelLayout { fixed_input: 1, visible: 2, hidden: 1, condition: 1, ..ChannelLayout::default() };
        let mut s = CellState::new(layout, Tensor::<f32>::ones(&[1, 5, h, w])).unwrap();
        let hit = perturb_damage(&mut s, 0, (cx, cy), r);
        let mut expect = 0;
        for y in 0..h {
            for x in 0..w {
                let inside = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r;
                expect += inside as usize;
                for c in 0..5 {
                    let v = s.grid.data()[c * h * w + y * w + x];
                    let evolving = (1..4).contains(&c);
                    prop_assert_eq!(v, if inside && evolving { 0.0 } else { 1.0 });
                }
            }
        }
        prop_assert_eq!(hit, expect);
    }
}

#[test]
fn damage_examples() {
    let layout = ChannelLayout::rgba(2);
    let mut s = CellState::new(layout.clone(), Tensor::<f32>::ones(&[1, 6, 8, 8])).unwrap();
    assert_eq!(perturb_damage(&mut s, 0, (3.0, 4.0), 0.5), 1);
    assert_eq!(s.grid.sum(), 6.0 * 63.0);
    let mut s = CellState::new(layout.clone(), Tensor::<f32>::ones(&[1, 6, 8, 8])).unwrap();
    perturb_damage(&mut s, 0, (0.0, 0.0), 8.0 * 2f64.sqrt());
    assert_eq!(s.grid.sum(), 0.0);

    let mut s = CellState::new(layout, Tensor::<f32>::ones(&[1, 6, 8, 8])).unwrap();
    assert_eq!(perturb_halfplane(&mut s, 0, Axis::Vertical, Side::First), 32);
    assert_eq!(s.grid.data()[0], 0.0);
    assert_eq!(s.grid.data()[7], 1.0);
}

fn cond_state(classes: usize, class: usize) -> CellState<f32> {
    let layout = ChannelLayout {
        visible: 4,
        hidden: 2,
        condition: classes,
        alpha_index: Some(3),
        ..ChannelLayout::default()
    };
    let cond = nca_core::nca::one_hot::<f32>(classes, class);
    let mut s = embed_seed(&layout, Seed::Pixel { height: 5, width: 5, color: None }, Some(&cond)).unwrap();
    s.grid.data_mut()[..50].iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 0.01);
    s
}

#[test]
fn mutate_examples() {
    let mut rng = stream(3, "mutate");
    for _ in 0..20 {
        let mut s = cond_state(2, 0);
        assert_eq!(perturb_mutate(&mut s, 0, &mut rng).unwrap(), (0, 1));
    }
    let mut counts = [0usize; 5];
    for _ in 0..1000 {
        let mut s = cond_state(5, 2);
        let before = s.grid.channels(0, 6).unwrap();
        let (old, new) = perturb_mutate(&mut s, 0, &mut rng).unwrap();
        assert_eq!(old, 2);
        assert_eq!(s.condition_class(0), Some(new));
        assert_eq!(s.grid.channels(0, 6).unwrap(), before);
        counts[new] += 1;
    }
    assert_eq!(counts[2], 0);
    assert!(counts.iter().enumerate().all(|(i, &c)| i == 2 || c > 150));

    let mut plain = embed_seed::<f32>(&ChannelLayout::rgba(2), Seed::Pixel { height: 3, width: 3, color: None }, None).unwrap();
    assert!(perturb_mutate(&mut plain, 0, &mut rng).is_err());
}

#[test]
fn pool_is_fifo_and_snapshots() {
    let layout = ChannelLayout::rgba(0);
    let entry = |i: usize| PoolEntry {
        state: CellState::new(layout.clone(), Tensor::full(&[1, 4, 1, 1], i as f32)).unwrap(),
        target: TargetRef::Image { index: i },
    };
    let mut pool = SamplePool::new(5);
    for i in 0..8 {
        pool.commit(entry(i));
        assert!(pool.len() <= 5);
    }
    let kept: Vec<usize> = pool
        .entries()
        .map(|e| match e.target {
            TargetRef::Image { index } => index,
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(kept, vec![3, 4, 5, 6, 7]);
    let mut drawn = pool.sample(&mut stream(0, "p")).unwrap();
    drawn.state.grid.data_mut()[0] = -1.0;
    assert!(pool.entries().all(|e| e.state.grid.data()[0] >= 0.0));
}

fn small_model(layout: ChannelLayout, width: usize, seed: u64) -> NcaModel<f32> {
    let mut spec = ModelSpec::new(layout, PerceptionSpec::Sobel);
    spec.update = UpdateSpec {
        hidden: vec![width],
        activation: Activation::Relu,
    };
    NcaModel::init(spec, &mut stream(seed, "init")).unwrap()
}

fn heart(size: usize) -> Dataset {
    Dataset::ImageTargets(ImageTargets::new(vec![builtin_glyph("heart", size).unwrap()], vec!["heart".into()]).unwrap())
}

fn quick_spec(iterations: usize, t: (usize, usize)) -> TrainSpec {
    TrainSpec {
        iterations,
        batch_size: 2,
        t_min: t.0,
        t_max: t.1,
        ..TrainSpec::default()
    }
}

#[test]
fn zero_lr_iteration_leaves_parameters() {
    let model = small_model(ChannelLayout::rgba(4), 16, 0);
    let mut spec = quick_spec(1, (4, 6));
    spec.batch_size = 1;
    spec.optimizer.lr = 0.0;
    let before = model.params.clone();
    let mut tr = Trainer::new(spec, model, heart(12), stream(0, "train")).unwrap();
    tr.step().unwrap();
    assert_eq!(tr.model.params, before);
    assert_eq!(tr.pool.len(), 1);
}

#[test]
fn full_reseed_ratio_draws_every_item_from_pool() {
    let mut spec = quick_spec(6, (2, 3));
    spec.pool = PoolSpec {
        reseed_ratio: 1.0,
        ..PoolSpec::default()
    };
    let mut tr = Trainer::new(spec, small_model(ChannelLayout::rgba(4), 8, 1), heart(10), stream(1, "train")).unwrap();
    let first = tr.step().unwrap();
    assert_eq!(first.pool_draws, 0);
    for _ in 0..5 {
        let r = tr.step().unwrap();
        assert_eq!(r.pool_draws, 2);
    }
    assert_eq!(tr.pool_draws_total, 10);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut tr = Trainer::new(
            quick_spec(5, (3, 6)),
            small_model(ChannelLayout::rgba(4), 8, 2),
            heart(10),
            stream(2, "train"),
        )
        .unwrap();
        tr.run_until(5, |_, _| {}).unwrap();
        tr.model.params
    };
    let (a, b) = (run(), run());
    for (x, y) in a.iter().zip(&b) {
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn generative_smoke_run_reduces_loss() {
    let data = heart(24);
    let target = match &data {
        Dataset::ImageTargets(t) => t.targets[0].clone(),
        _ => unreachable!(),
    };
    let mut spec = quick_spec(100, (16, 24));
    spec.pool.enabled = false;
    spec.schedule = Schedule::Constant;
    let layout = ChannelLayout::rgba(8);
    let model = small_model(layout.clone(), 32, 3);
    let seed = embed_seed::<f32>(&layout, Seed::Pixel { height: 24, width: 24, color: None }, None).unwrap();
    let initial = nca_core::training::mse(&seed.visible().reshape(target.shape()).unwrap(), &target);
    let mut tr = Trainer::new(spec, model, data, stream(3, "train")).unwrap();
    let mut losses = Vec::new();
    tr.run_until(100, |r, _| losses.push(r.loss)).unwrap();
    let tail = median(&losses[50..]);
    assert!(tail < initial, "{tail} vs initial {initial}");
    assert!(tail < median(&losses[..50]));
}

fn toy_squares(count: usize) -> LabeledImages {
    let (h, w) = (6, 6);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..count {
        let label = i % 2;
        let mut d = vec![0.0f32; h * w];
        for y in 1..5 {
            for x in 0..3 {
                let xx = if label == 0 { x } else { x + 3 };
                d[y * w + xx] = 1.0;
            }
        }
        images.push(Tensor::new(&[1, h, w], d).unwrap());
        labels.push(label);
    }
    LabeledImages::new(images, labels, 2).unwrap()
}

fn classify_layout() -> ChannelLayout {
    ChannelLayout {
        fixed_input: 1,
        visible: 0,
        hidden: 6,
        classes: 2,
        ..ChannelLayout::default()
    }
}

#[test]
fn untrained_classifier_ties_to_lowest_index() {
    let model = small_model(classify_layout(), 8, 4);
    let data = toy_squares(2);
    let s = embed_seed(&classify_layout(), Seed::Image(&data.images[1]), None).unwrap();
    let (out, _) = model.rollout(&s, 5, &mut stream(0, "r"), nca_core::nca::Record::None).unwrap();
    let cls = out.class_channels();
    assert!(cls.data().iter().all(|&v| v == 0.0));
    assert_eq!(predict(&cls, 0), 0);
}

#[test]
fn two_class_toy_reaches_high_accuracy() {
    let data = toy_squares(8);
    let mut spec = quick_spec(500, (8, 12));
    spec.batch_size = 4;
    spec.loss = LossKind::PixelMse;
    spec.pool.enabled = false;
    let model = small_model(classify_layout(), 16, 5);
    let mut tr = Trainer::new(spec, model, Dataset::LabeledImages(data.clone()), stream(5, "train")).unwrap();
    let mut losses = Vec::new();
    tr.run_until(500, |r, _| losses.push(r.loss)).unwrap();
    assert!(median(&losses[450..]) < median(&losses[..50]));
    let mut correct = 0;
    let mut rng = stream(6, "eval");
    for (img, &label) in data.images.iter().zip(&data.labels) {
        let s = embed_seed(&classify_layout(), Seed::Image(img), None).unwrap();
        let mut cur = s.clone();
        for _ in 0..12 {
            cur = tr.model.step(&cur, &mut rng).unwrap();
            assert_eq!(cur.grid.channels(0, 1).unwrap(), s.grid.channels(0, 1).unwrap());
        }
        correct += (predict(&cur.class_channels(), 0) == label) as usize;
    }
    assert!(correct as f64 / data.len() as f64 > 0.95, "{correct}/{}", data.len());
}

fn static_video(k: usize) -> VideoSequences {
    let (h, w) = (8, 8);
    let seqs = (0..3)
        .map(|s| {
            let mut d = vec![0.0f32; h * w];
            for y in 2..5 {
                for x in s + 1..s + 4 {
                    d[y * w + x] = 1.0;
                }
            }
            vec![Tensor::new(&[1, h, w], d).unwrap(); 6]
        })
        .collect();
    VideoSequences::new(seqs, k).unwrap()
}

fn video_layout(k: usize) -> ChannelLayout {
    ChannelLayout {
        visible: k,
        hidden: 4,
        ..ChannelLayout::default()
    }
}

#[test]
fn static_video_training_beats_untrained() {
    let data = static_video(2);
    let mut spec = quick_spec(200, (2, 4));
    spec.batch_size = 3;
    let model = small_model(video_layout(2), 16, 7);
    let untrained = model.clone();
    let mut tr = Trainer::new(spec, model, Dataset::VideoSequences(data.clone()), stream(7, "train")).unwrap();
    let mut recycled = false;
    tr.run_until(200, |_, t| {
        recycled |= t.pool.entries().any(|e| e.state.step_index > 0);
    })
    .unwrap();
    assert!(recycled);
    let eval = |m: &NcaModel<f32>| {
        let mut rng = stream(8, "eval");
        let mut total = 0.0;
        for s in 0..3 {
            let st = embed_seed(&video_layout(2), Seed::Image(&data.window(s, 0)), None).unwrap();
            let (out, _) = m.rollout(&st, 3, &mut rng, nca_core::nca::Record::None).unwrap();
            let vis = out.visible();
            total += nca_core::training::mse(&vis.clone().reshape(&[2, 8, 8]).unwrap(), &data.window(s, 1));
        }
        total
    };
    // A static clip makes the identity optimal, and the zero-init model is the identity;
    // training from a random output layer has to recover it.
    let mut noisy = untrained.clone();
    let n = noisy.params.len();
    let mut rng = stream(9, "noise");
    use rand::Rng;
    noisy.params[n - 2].data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
    let mut spec = quick_spec(200, (2, 4));
    spec.batch_size = 3;
    let before = eval(&noisy);
    let mut tr2 = Trainer::new(spec, noisy, Dataset::VideoSequences(data.clone()), stream(7, "train")).unwrap();
    tr2.run_until(200, |_, _| {}).unwrap();
    assert!(eval(&tr2.model) < before, "{} vs {before}", eval(&tr2.model));
    assert!(eval(&tr.model).is_finite());
}

#[test]
fn single_frame_video_shapes() {
    let data = static_video(1);
    assert_eq!(data.window(0, 0).shape(), &[1, 8, 8]);
    let mut tr = Trainer::new(
        quick_spec(2, (1, 2)),
        small_model(video_layout(1), 8, 1),
        Dataset::VideoSequences(data),
        stream(1, "train"),
    )
    .unwrap();
    tr.run_until(2, |_, _| {}).unwrap();
}

#[test]
fn mismatched_dataset_is_rejected() {
    let model = small_model(ChannelLayout::rgba(4), 8, 0);
    let spec = TrainSpec {
        loss: LossKind::PixelCe,
        ..quick_spec(1, (1, 2))
    };
    assert!(Trainer::new(spec, model, heart(8), stream(0, "t")).is_err());
}

#[test]
fn spec_validation_names_the_key() {
    let bad = TrainSpec {
        t_min: 10,
        t_max: 5,
        ..TrainSpec::default()
    };
    assert_eq!(bad.validate().unwrap_err().0, "t_max");
    let bad = TrainSpec {
        grad_clip_norm: 0.0,
        ..TrainSpec::default()
    };
    assert_eq!(bad.validate().unwrap_err().0, "grad_clip_norm");
}
