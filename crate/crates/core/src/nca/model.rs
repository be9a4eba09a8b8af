use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ChannelLayout, NcaError};
use crate::autodiff::{ConvConfig, Graph, Padding, Real, Tensor, Var};

/// Neighborhood sensing stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerceptionSpec {
    /// Fixed identity, Sobel-x and Sobel-y filters on every input channel.
    Sobel,
    /// Trainable convolution; `channels` defaults to three per input channel.
    Conv {
        kernel_size: usize,
        #[serde(default = "one")]
        dilation: usize,
        #[serde(default)]
        channels: Option<usize>,
    },
    /// `x + conv2(relu(conv1(x)))` with two trainable `k×k` convolutions.
    Residual {
        kernel_size: usize,
        #[serde(default)]
        hidden: Option<usize>,
    },
    /// Member outputs concatenated along channels.
    Combined { members: Vec<PerceptionSpec> },
}

fn one() -> usize {
    1
}

impl PerceptionSpec {
    pub fn conv3x3() -> Self {
        PerceptionSpec::Conv {
            kernel_size: 3,
            dilation: 1,
            channels: None,
        }
    }

    pub fn output_channels(&self, cin: usize) -> usize {
        match self {
            PerceptionSpec::Sobel => 3 * cin,
            PerceptionSpec::Conv { channels, .. } => channels.unwrap_or(3 * cin),
            PerceptionSpec::Residual { .. } => cin,
            PerceptionSpec::Combined { members } => {
                members.iter().map(|m| m.output_channels(cin)).sum()
            }
        }
    }

    fn validate(&self) -> Result<(), NcaError> {
        match self {
            PerceptionSpec::Sobel => Ok(()),
            PerceptionSpec::Conv {
                kernel_size,
                dilation,
                channels,
            } => {
                if kernel_size % 2 == 0 || *dilation == 0 || *channels == Some(0) {
                    return Err(NcaError::Spec(format!(
                        "conv perception needs an odd kernel and positive dilation/channels, got k={kernel_size} d={dilation}"
                    )));
                }
                Ok(())
            }
            PerceptionSpec::Residual { kernel_size, .. } => {
                if kernel_size % 2 == 0 {
                    return Err(NcaError::Spec(format!(
                        "residual perception kernel {kernel_size} must be odd"
                    )));
                }
                Ok(())
            }
            PerceptionSpec::Combined { members } => {
                if members.is_empty() {
                    return Err(NcaError::Spec("combined perception has no members".into()));
                }
                members.iter().try_for_each(PerceptionSpec::validate)
            }
        }
    }

    fn param_shapes(&self, cin: usize, out: &mut Vec<(String, Vec<usize>)>, prefix: &str) {
        match self {
            PerceptionSpec::Sobel => {}
            PerceptionSpec::Conv { kernel_size: k, .. } => {
                let p = self.output_channels(cin);
                out.push((format!("{prefix}conv.weight"), vec![p, cin, *k, *k]));
                out.push((format!("{prefix}conv.bias"), vec![p]));
            }
            PerceptionSpec::Residual { kernel_size: k, hidden } => {
                let hdn = hidden.unwrap_or(2 * cin);
                out.push((format!("{prefix}res1.weight"), vec![hdn, cin, *k, *k]));
                out.push((format!("{prefix}res1.bias"), vec![hdn]));
                out.push((format!("{prefix}res2.weight"), vec![cin, hdn, *k, *k]));
                out.push((format!("{prefix}res2.bias"), vec![cin]));
            }
            PerceptionSpec::Combined { members } => {
                for (i, m) in members.iter().enumerate() {
                    m.param_shapes(cin, out, &format!("{prefix}{i}."));
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    None,
}

/// 1×1 convolution stack mapping perceived features to a state increment.
/// The output layer is appended automatically and zero-initialised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateSpec {
    #[serde(default = "default_hidden_widths")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

fn default_hidden_widths() -> Vec<usize> {
    vec![128]
}

impl Default for UpdateSpec {
    fn default() -> Self {
        Self {
            hidden: default_hidden_widths(),
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AliveNeighborhood {
    /// A cell is alive when its own alpha exceeds the threshold.
    #[serde(rename = "self")]
    SelfOnly,
    /// A cell is alive when any alpha in its 3×3 neighborhood does.
    #[default]
    #[serde(rename = "3x3")]
    Moore,
}

fn default_fire_rate() -> f64 {
    0.5
}

fn default_alpha_threshold() -> f64 {
    0.1
}

/// Full architecture description; parameters are a pure function of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub layout: ChannelLayout,
    pub perception: PerceptionSpec,
    #[serde(default)]
    pub update: UpdateSpec,
    #[serde(default = "default_fire_rate")]
    pub fire_rate: f64,
    #[serde(default)]
    pub living_mask: bool,
    #[serde(default = "default_alpha_threshold")]
    pub alpha_threshold: f64,
    #[serde(default)]
    pub alive_neighborhood: AliveNeighborhood,
    #[serde(default)]
    pub padding: Padding,
}

impl ModelSpec {
    pub fn new(layout: ChannelLayout, perception: PerceptionSpec) -> Self {
        Self {
            layout,
            perception,
            update: UpdateSpec::default(),
            fire_rate: default_fire_rate(),
            living_mask: false,
            alpha_threshold: default_alpha_threshold(),
            alive_neighborhood: AliveNeighborhood::default(),
            padding: Padding::Zeros,
        }
    }

    pub fn validate(&self) -> Result<(), NcaError> {
        self.layout.validate()?;
        self.perception.validate()?;
        if !(self.fire_rate >= 0.0 && self.fire_rate <= 1.0) {
            return Err(NcaError::Spec(format!(
                "fire rate {} outside [0, 1]",
                self.fire_rate
            )));
        }
        if self.living_mask && self.layout.alpha_index.is_none() {
            return Err(NcaError::NoAlpha);
        }
        if self.update.hidden.contains(&0) {
            return Err(NcaError::Spec("update layer width must be positive".into()));
        }
        Ok(())
    }

    pub fn perception_channels(&self) -> usize {
        self.perception.output_channels(self.layout.total())
    }

    /// Named parameter shapes in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.perception
            .param_shapes(self.layout.total(), &mut out, "perception.");
        let mut cin = self.perception_channels();
        for (i, &w) in self.update.hidden.iter().enumerate() {
            out.push((format!("update.{i}.weight"), vec![w, cin, 1, 1]));
            out.push((format!("update.{i}.bias"), vec![w]));
            cin = w;
        }
        let cout = self.layout.evolving();
        out.push(("update.out.weight".into(), vec![cout, cin, 1, 1]));
        out.push(("update.out.bias".into(), vec![cout]));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Model parameters with their architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct NcaModel<T: Real = f32> {
    pub spec: ModelSpec,
    pub params: Vec<Tensor<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputInit {
    Zero,
    Random,
}

impl<T: Real> NcaModel<T> {
    /// Uniform `±1/sqrt(fan_in)` initialisation; the output layer is zero so
    /// a fresh model leaves every state unchanged.
    pub fn init(spec: ModelSpec, rng: &mut impl Rng) -> Result<Self, NcaError> {
        Self::init_with(spec, rng, OutputInit::Zero)
    }

    pub fn init_with(spec: ModelSpec, rng: &mut impl Rng, output: OutputInit) -> Result<Self, NcaError> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        let last = shapes.len() - 2;
        let mut params = Vec::with_capacity(shapes.len());
        let mut fan_in = 1;
        for (i, (name, shape)) in shapes.iter().enumerate() {
            if name.ends_with("weight") {
                fan_in = shape[1..].iter().product::<usize>().max(1);
            }
            let n: usize = shape.iter().product();
            let data = if i >= last && output == OutputInit::Zero {
                vec![T::zero(); n]
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n)
                    .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                    .collect()
            };
            params.push(Tensor::new(shape, data).map_err(NcaError::from)?);
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: ModelSpec, params: Vec<Tensor<T>>) -> Result<Self, NcaError> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len()
            || shapes.iter().zip(&params).any(|((_, s), p)| s.as_slice() != p.shape())
        {
            return Err(NcaError::Spec(
                "parameter arrays do not match the model spec".into(),
            ));
        }
        Ok(Self { spec, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> NcaModel<U> {
        NcaModel {
            spec: self.spec.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Records the parameters on `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundModel {
        let params = self
            .params
            .iter()
            .map(|p| g.leaf(p.clone(), trainable))
            .collect();
        let sobel = contains_sobel(&self.spec.perception)
            .then(|| g.constant(sobel_kernel(self.spec.layout.total())));
        BoundModel { params, sobel }
    }
}

fn contains_sobel(p: &PerceptionSpec) -> bool {
    match p {
        PerceptionSpec::Sobel => true,
        PerceptionSpec::Combined { members } => members.iter().any(contains_sobel),
        _ => false,
    }
}

/// Depthwise kernel `[3·C, 1, 3, 3]`: identity, Sobel-x, Sobel-y per channel.
pub fn sobel_kernel<T: Real>(channels: usize) -> Tensor<T> {
    const IDENTITY: [f64; 9] = [0., 0., 0., 0., 1., 0., 0., 0., 0.];
    const SOBEL_X: [f64; 9] = [-1., 0., 1., -2., 0., 2., -1., 0., 1.];
    const SOBEL_Y: [f64; 9] = [-1., -2., -1., 0., 0., 0., 1., 2., 1.];
    let mut data = Vec::with_capacity(channels * 27);
    for _ in 0..channels {
        // Gradient filters are scaled by 1/8 so their response stays O(1).
        for (k, scale) in [(IDENTITY, 1.0), (SOBEL_X, 0.125), (SOBEL_Y, 0.125)] {
            data.extend(k.iter().map(|&v| T::from_f64_lossy(v * scale)));
        }
    }
    Tensor::new(&[3 * channels, 1, 3, 3], data).expect("sobel kernel")
}

/// Parameter handles of a model recorded on a graph.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub params: Vec<Var>,
    sobel: Option<Var>,
}

impl BoundModel {
    /// Uses parameter leaves already recorded on `g` (in storage order).
    pub fn from_vars<T: Real>(g: &mut Graph<T>, spec: &ModelSpec, params: Vec<Var>) -> Self {
        let sobel = contains_sobel(&spec.perception).then(|| g.constant(sobel_kernel(spec.layout.total())));
        BoundModel { params, sobel }
    }

    /// Perceived features `[N, P, H, W]` of the full state.
    pub fn perceive<T: Real>(
        &self,
        g: &mut Graph<T>,
        spec: &ModelSpec,
        state: Var,
    ) -> Result<Var, NcaError> {
        let mut cursor = 0;
        let out = self.perceive_spec(g, spec, &spec.perception, state, &mut cursor)?;
        Ok(out)
    }

    fn perceive_spec<T: Real>(
        &self,
        g: &mut Graph<T>,
        spec: &ModelSpec,
        p: &PerceptionSpec,
        state: Var,
        cursor: &mut usize,
    ) -> Result<Var, NcaError> {
        let cin = g.value(state).shape()[1];
        let base = ConvConfig::with_padding(spec.padding);
        match p {
            PerceptionSpec::Sobel => {
                let k = self.sobel.expect("sobel kernel bound");
                let cfg = ConvConfig { groups: cin, ..base };
                Ok(g.conv2d(state, k, None, cfg)?)
            }
            PerceptionSpec::Conv { dilation, .. } => {
                let (w, b) = (self.params[*cursor], self.params[*cursor + 1]);
                *cursor += 2;
                let cfg = ConvConfig {
                    dilation: *dilation,
                    ..base
                };
                Ok(g.conv2d(state, w, Some(b), cfg)?)
            }
            PerceptionSpec::Residual { .. } => {
                let p = &self.params[*cursor..*cursor + 4];
                *cursor += 4;
                let h = g.conv2d(state, p[0], Some(p[1]), base)?;
                let h = g.relu(h)?;
                let r = g.conv2d(h, p[2], Some(p[3]), base)?;
                Ok(g.add(state, r)?)
            }
            PerceptionSpec::Combined { members } => {
                let mut outs = Vec::with_capacity(members.len());
                for m in members {
                    outs.push(self.perceive_spec(g, spec, m, state, cursor)?);
                }
                Ok(g.concat_channels(&outs)?)
            }
        }
    }

    fn perception_param_count(spec: &ModelSpec) -> usize {
        let mut shapes = Vec::new();
        spec.perception
            .param_shapes(spec.layout.total(), &mut shapes, "");
        shapes.len()
    }

    /// State increment `[N, C_evolving, H, W]` from perceived features.
    pub fn update<T: Real>(
        &self,
        g: &mut Graph<T>,
        spec: &ModelSpec,
        features: Var,
    ) -> Result<Var, NcaError> {
        let mut i = Self::perception_param_count(spec);
        let mut x = features;
        let cfg = ConvConfig::default();
        for _ in &spec.update.hidden {
            x = g.conv2d(x, self.params[i], Some(self.params[i + 1]), cfg)?;
            if spec.update.activation == Activation::Relu {
                x = g.relu(x)?;
            }
            i += 2;
        }
        Ok(g.conv2d(x, self.params[i], Some(self.params[i + 1]), cfg)?)
    }
}
