//! Finite-difference verification of every differentiable operation and of
//! the composed NCA step.

use rand::Rng;

use crate::autodiff::{
    grad_check_with_fault, AutodiffError, BinaryOp, ConvConfig, Graph, OpKind, Padding, Tensor, Var,
};
use crate::nca::{
    step_on_graph, AliveNeighborhood, BoundModel, ChannelLayout, ModelSpec, NcaModel, OutputInit, PerceptionSpec,
    UpdateSpec,
};
use crate::rng::{stream, NcaRng};

/// Name of the composed-step entry in the suite report.
pub const NCA_STEP: &str = "nca_step";

/// Worst relative error of one operation over its random instances.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
}

fn rand_tensor(rng: &mut NcaRng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Values with magnitude in `[0.1, 1]`, away from kinks at zero.
fn away_from_zero(rng: &mut NcaRng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// `Σ w ⊙ out` with fixed random weights `w`, so every output coordinate
/// contributes a distinct gradient.
fn project(g: &mut Graph<f64>, out: Var, w: &Tensor<f64>) -> Result<Var, AutodiffError> {
    let w = g.constant(w.clone());
    let p = g.mul(out, w)?;
    g.sum_all(p)
}

type Builder = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError>>;

/// A random instance for `kind`: the loss builder and its parameters.
fn instance(kind: OpKind, rng: &mut NcaRng) -> Result<(Builder, Vec<Tensor<f64>>), AutodiffError> {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let (h, w) = (rng.random_range(3..=5), rng.random_range(3..=5));
    let shape = [n, c, h, w];
    Ok(match kind {
        OpKind::Conv2d => {
            let groups = rng.random_range(1..=2);
            let cin = c * groups;
            let cout = rng.random_range(1..=2) * groups;
            let k = [1, 3, 5][rng.random_range(0..3)];
            let cfg = ConvConfig {
                dilation: rng.random_range(1..=2),
                padding: if rng.random::<bool>() { Padding::Circular } else { Padding::Zeros },
                groups,
            };
            let x = rand_tensor(rng, &[n, cin, h, w]);
            let kern = rand_tensor(rng, &[cout, cin / groups, k, k]);
            let b = rand_tensor(rng, &[cout]);
            let wt = rand_tensor(rng, &[n, cout, h, w]);
            let f: Builder = Box::new(move |g, v| {
                let o = g.conv2d(v[0], v[1], Some(v[2]), cfg)?;
                project(g, o, &wt)
            });
            (f, vec![x, kern, b])
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let op = match kind {
                OpKind::Add => BinaryOp::Add,
                OpKind::Sub => BinaryOp::Sub,
                _ => BinaryOp::Mul,
            };
            let bshape: Vec<usize> = match rng.random_range(0..3) {
                0 => shape.to_vec(),
                1 => vec![1, c, 1, 1],
                _ => vec![c],
            };
            let a = rand_tensor(rng, &shape);
            let b = rand_tensor(rng, &bshape);
            let wt = rand_tensor(rng, &shape);
            let swap = rng.random::<bool>() && bshape.len() == 4 && bshape[0] == n;
            let f: Builder = Box::new(move |g, v| {
                let o = if swap { g.binary(op, v[1], v[0])? } else { g.binary(op, v[0], v[1])? };
                project(g, o, &wt)
            });
            (f, vec![a, b])
        }
        OpKind::Affine => {
            let (m, s) = (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0));
            let wt = rand_tensor(rng, &shape);
            let f: Builder = Box::new(move |g, v| {
                let o = g.affine(v[0], m, s)?;
                project(g, o, &wt)
            });
            (f, vec![rand_tensor(rng, &shape)])
        }
        OpKind::Relu | OpKind::Abs => {
            let wt = rand_tensor(rng, &shape);
            let f: Builder = Box::new(move |g, v| {
                let o = if kind == OpKind::Relu { g.relu(v[0])? } else { g.abs(v[0])? };
                project(g, o, &wt)
            });
            (f, vec![away_from_zero(rng, &shape)])
        }
        OpKind::Sum | OpKind::Mean => {
            let axes: Vec<usize> = (0..4).filter(|_| rng.random::<bool>()).collect();
            let mut out_shape = shape.to_vec();
            for (a, d) in out_shape.iter_mut().enumerate() {
                if axes.is_empty() || axes.contains(&a) {
                    *d = 1;
                }
            }
            let wt = rand_tensor(rng, &out_shape);
            let f: Builder = Box::new(move |g, v| {
                let o = if kind == OpKind::Sum { g.sum(v[0], &axes)? } else { g.mean(v[0], &axes)? };
                project(g, o, &wt)
            });
            (f, vec![rand_tensor(rng, &shape)])
        }
        OpKind::LogSoftmax => {
            let k = rng.random_range(2..=5);
            let s = [n, k, h, w];
            let x = rand_tensor(rng, &s).map(|v| 3.0 * v);
            let wt = rand_tensor(rng, &s);
            let f: Builder = Box::new(move |g, v| {
                let o = g.log_softmax(v[0], 1)?;
                project(g, o, &wt)
            });
            (f, vec![x])
        }
        OpKind::SliceChannels => {
            let cc = c + 2;
            let start = rng.random_range(0..cc);
            let len = rng.random_range(1..=cc - start);
            let wt = rand_tensor(rng, &[n, len, h, w]);
            let f: Builder = Box::new(move |g, v| {
                let o = g.slice_channels(v[0], start, len)?;
                project(g, o, &wt)
            });
            (f, vec![rand_tensor(rng, &[n, cc, h, w])])
        }
        OpKind::ConcatChannels => {
            let c2 = rng.random_range(1..=3);
            let wt = rand_tensor(rng, &[n, c + c2, h, w]);
            let f: Builder = Box::new(move |g, v| {
                let o = g.concat_channels(&[v[0], v[1]])?;
                project(g, o, &wt)
            });
            (f, vec![rand_tensor(rng, &shape), rand_tensor(rng, &[n, c2, h, w])])
        }
    })
}

/// A small random NCA configuration cycling through perception variants,
/// padding modes and the living mask.
pub fn random_step_spec(i: usize, rng: &mut NcaRng) -> ModelSpec {
    let layout = ChannelLayout {
        fixed_input: (i % 3 == 2) as usize,
        visible: 4,
        hidden: rng.random_range(1..=2),
        classes: (i % 4 == 3) as usize * 2,
        condition: (i % 5 == 4) as usize * 2,
        alpha_index: Some(3),
    };
    let perception = match i % 4 {
        0 => PerceptionSpec::Sobel,
        1 => PerceptionSpec::Conv {
            kernel_size: 3,
            dilation: 1 + (i / 4) % 2,
            channels: Some(6),
        },
        2 => PerceptionSpec::Residual {
            kernel_size: 3,
            hidden: Some(4),
        },
        _ => PerceptionSpec::Combined {
            members: vec![
                PerceptionSpec::conv3x3(),
                PerceptionSpec::Conv {
                    kernel_size: 5,
                    dilation: 2,
                    channels: Some(4),
                },
            ],
        },
    };
    let mut spec = ModelSpec::new(layout, perception);
    spec.update = UpdateSpec {
        hidden: vec![8],
        ..UpdateSpec::default()
    };
    spec.padding = if i % 2 == 0 { Padding::Zeros } else { Padding::Circular };
    spec.living_mask = i % 3 != 0;
    spec.alive_neighborhood = if i % 2 == 0 { AliveNeighborhood::Moore } else { AliveNeighborhood::SelfOnly };
    spec
}

/// One composed NCA step instance: parameters are the model arrays, the loss
/// is a random projection of the next state.
fn step_instance(i: usize, rng: &mut NcaRng) -> Result<(Builder, Vec<Tensor<f64>>), AutodiffError> {
    let spec = random_step_spec(i, rng);
    let model: NcaModel<f64> = NcaModel::init_with(spec.clone(), rng, OutputInit::Random)
        .map_err(|e| AutodiffError::Shape(e.to_string()))?;
    let (h, w) = (rng.random_range(4..=6), rng.random_range(4..=6));
    let c = spec.layout.total();
    // Alpha values stay clear of the threshold so finite differences cannot
    // flip the living mask.
    let mut state = rand_tensor(rng, &[1, c, h, w]);
    let a = spec.layout.alpha_channel().expect("alpha");
    for v in &mut state.data_mut()[a * h * w..(a + 1) * h * w] {
        *v = if rng.random::<f64>() < 0.6 { rng.random_range(0.3..1.0) } else { rng.random_range(-0.5..0.0) };
    }
    let mask = Tensor::new(
        &[1, 1, h, w],
        (0..h * w).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect(),
    )?;
    let wt = rand_tensor(rng, &[1, c, h, w]);
    let f: Builder = Box::new(move |g, v| {
        let bound = BoundModel::from_vars(g, &spec, v.to_vec());
        let s = g.constant(state.clone());
        let next = step_on_graph(g, &spec, &bound, s, &mask).map_err(|e| match e {
            crate::nca::NcaError::Autodiff(a) => a,
            e => AutodiffError::Shape(e.to_string()),
        })?;
        project(g, next, &wt)
    });
    Ok((f, model.params))
}

/// Runs `instances` random checks per operation plus the composed step.
/// With `fault`, that operation's backward rule is deliberately corrupted.
pub fn gradcheck_suite(
    instances: usize,
    seed: u64,
    eps: f64,
    fault: Option<OpKind>,
) -> Result<Vec<OpCheck>, AutodiffError> {
    let mut out = Vec::new();
    for kind in OpKind::ALL {
        let mut rng = stream(seed, kind.name());
        let mut worst = 0f64;
        for _ in 0..instances {
            let (f, params) = instance(kind, &mut rng)?;
            let r = grad_check_with_fault(f, &params, eps, fault)?;
            worst = worst.max(r.max_rel_error);
        }
        out.push(OpCheck {
            name: kind.name(),
            instances,
            worst,
        });
    }
    let mut rng = stream(seed, NCA_STEP);
    let mut worst = 0f64;
    for i in 0..instances {
        let (f, params) = step_instance(i, &mut rng)?;
        let r = grad_check_with_fault(f, &params, eps, fault)?;
        worst = worst.max(r.max_rel_error);
    }
    out.push(OpCheck {
        name: NCA_STEP,
        instances,
        worst,
    });
    Ok(out)
}
