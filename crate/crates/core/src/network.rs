//! Feature mapping from item content to fDNA: a fully connected ReLU tower,
//! a precomputed dense feature channel, and the merge model that combines two
//! frozen channels.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::artifact::{write_atomic, Artifact};
use crate::error::{check_dim, Error, Result};
use crate::rng;
use crate::sparse::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::invalid(format!("unknown activation `{s}`"))),
        }
    }
}

/// Shape of one fully connected layer. Dropout acts on the layer's output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
}

impl LayerSpec {
    pub fn new(input_width: usize, output_width: usize, activation: Activation, dropout_rate: f64) -> Self {
        LayerSpec {
            input_width,
            output_width,
            activation,
            dropout_rate,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.output_width == 0 {
            return Err(Error::invalid(format!(
                "layer widths must be positive, got {} -> {}",
                self.input_width, self.output_width
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `output_width x input_width`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.spec.input_width + inp]
    }
}

/// Network input: the sparse one-hot attribute vector or a dense feature vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Sparse(SparseVector),
    Dense(Vec<f64>),
}

impl Input {
    pub fn width(&self) -> usize {
        match self {
            Input::Sparse(s) => s.dim,
            Input::Dense(d) => d.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScale {
    /// σ = sqrt(2 / fan_in)
    He,
    Fixed(f64),
}

impl InitScale {
    pub fn sigma(self, fan_in: usize) -> f64 {
        match self {
            InitScale::He => (2.0 / fan_in as f64).sqrt(),
            InitScale::Fixed(s) => s,
        }
    }
}

/// Geometric taper of hidden widths from `input` down to `output` over `layers` layers.
pub fn taper_widths(input: usize, output: usize, layers: usize) -> Vec<usize> {
    let ratio = output as f64 / input as f64;
    (1..layers)
        .map(|l| ((input as f64) * ratio.powf(l as f64 / layers as f64)).round().max(1.0) as usize)
        .collect()
}

/// Layer specs for an fDNA tower: ReLU throughout, dropout on hidden layers only.
pub fn tower_specs(input: usize, hidden: &[usize], output: usize, dropout: f64) -> Vec<LayerSpec> {
    let mut widths = vec![input];
    widths.extend_from_slice(hidden);
    widths.push(output);
    let n = widths.len() - 1;
    (0..n)
        .map(|l| {
            let rate = if l + 1 < n { dropout } else { 0.0 };
            LayerSpec::new(widths[l], widths[l + 1], Activation::Relu, rate)
        })
        .collect()
}

/// Per-layer dropout keep masks (`None` for layers without dropout).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks(pub Vec<Option<Vec<bool>>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// No dropout.
    Infer,
    /// Dropout masks drawn from a stream seeded with `seed`.
    Train { seed: u64 },
}

/// Everything backward needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Input,
    /// Output of each layer after activation and dropout.
    outputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    masks: DropoutMasks,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn masks(&self) -> &DropoutMasks {
        &self.masks
    }
}

/// Gradients shaped like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &EmbeddingModel) -> Self {
        Gradients {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights).chain(self.biases.iter_mut().zip(&other.biases)) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    /// Parameters in the order of [`EmbeddingModel::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Fully connected tower mapping an item's input vector to its fDNA.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    layers: Vec<Layer>,
}

impl EmbeddingModel {
    /// Builds from explicit layers, checking that consecutive widths agree.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a model needs at least one layer"));
        }
        for (l, layer) in layers.iter().enumerate() {
            layer.spec.validate()?;
            check_dim("layer weights", layer.spec.input_width * layer.spec.output_width, layer.weights.len())?;
            check_dim("layer bias", layer.spec.output_width, layer.bias.len())?;
            if l > 0 {
                check_dim("consecutive layer widths", layers[l - 1].spec.output_width, layer.spec.input_width)?;
            }
        }
        Ok(EmbeddingModel { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].spec.input_width
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().spec.output_width
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim("flat parameters", self.parameter_count(), params.len())?;
        let mut pos = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[pos..pos + nw]);
            pos += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[pos..pos + nb]);
            pos += nb;
        }
        Ok(())
    }

    pub fn draw_masks(&self, seed: u64) -> DropoutMasks {
        let mut rng = rng::rng(seed);
        DropoutMasks(
            self.layers
                .iter()
                .map(|l| {
                    (l.spec.dropout_rate > 0.0).then(|| {
                        (0..l.spec.output_width)
                            .map(|_| rng.random::<f64>() >= l.spec.dropout_rate)
                            .collect()
                    })
                })
                .collect(),
        )
    }

    pub fn forward(&self, input: &Input, mode: Mode) -> Result<(Vec<f64>, ForwardCache)> {
        match mode {
            Mode::Infer => self.forward_with_masks(input, None),
            Mode::Train { seed } => {
                let masks = self.draw_masks(seed);
                self.forward_with_masks(input, Some(&masks))
            }
        }
    }

    /// Forward pass without keeping a cache.
    pub fn infer(&self, input: &Input) -> Result<Vec<f64>> {
        check_dim("model input", self.input_width(), input.width())?;
        let mut x = self.layer_forward(0, input);
        x.iter_mut().for_each(|v| *v = self.layers[0].spec.activation.apply(*v));
        for l in 1..self.layers.len() {
            let mut y = self.layer_forward(l, &Input::Dense(x));
            y.iter_mut().for_each(|v| *v = self.layers[l].spec.activation.apply(*v));
            x = y;
        }
        Ok(x)
    }

    fn layer_forward(&self, l: usize, input: &Input) -> Vec<f64> {
        let layer = &self.layers[l];
        let n_in = layer.spec.input_width;
        let mut y = layer.bias.clone();
        match input {
            Input::Sparse(s) => {
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &layer.weights[o * n_in..(o + 1) * n_in];
                    *yo += s.iter().map(|(k, v)| row[k] * v).sum::<f64>();
                }
            }
            Input::Dense(x) => {
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &layer.weights[o * n_in..(o + 1) * n_in];
                    *yo += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                }
            }
        }
        y
    }

    /// Forward pass with explicit dropout masks (`None` = inference, no dropout).
    /// Kept units are scaled by 1/(1 - rate), so inference needs no rescaling.
    pub fn forward_with_masks(&self, input: &Input, masks: Option<&DropoutMasks>) -> Result<(Vec<f64>, ForwardCache)> {
        check_dim("model input", self.input_width(), input.width())?;
        if let Some(m) = masks {
            check_dim("dropout masks", self.layers.len(), m.0.len())?;
        }
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = if l == 0 {
                self.layer_forward(0, input)
            } else {
                self.layer_forward(l, &Input::Dense(outputs[l - 1].clone()))
            };
            let mut out: Vec<f64> = pre.iter().map(|&z| layer.spec.activation.apply(z)).collect();
            if let Some(mask) = masks.and_then(|m| m.0[l].as_ref()) {
                check_dim("dropout mask", layer.spec.output_width, mask.len())?;
                let keep = 1.0 / (1.0 - layer.spec.dropout_rate);
                for (v, &k) in out.iter_mut().zip(mask) {
                    *v = if k { *v * keep } else { 0.0 };
                }
            }
            pre_activations.push(pre);
            outputs.push(out);
        }
        let masks = masks.cloned().unwrap_or_else(|| DropoutMasks(vec![None; self.layers.len()]));
        let f = outputs.last().unwrap().clone();
        Ok((
            f,
            ForwardCache {
                input: input.clone(),
                outputs,
                pre_activations,
                masks,
            },
        ))
    }

    /// Backpropagates `grad_out` (dLoss/dOutput) and returns parameter and input gradients.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_into(cache, grad_out, &mut grads, true)?;
        Ok((grads, input_grad.expect("input gradient requested")))
    }

    /// Accumulates parameter gradients into `grads`. For sparse inputs only the
    /// active first-layer columns are touched.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_out: &[f64],
        grads: &mut Gradients,
        want_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        if cache.outputs.len() != self.layers.len() || cache.input.width() != self.input_width() {
            return Err(Error::invalid("forward cache does not belong to this model"));
        }
        check_dim("output gradient", self.output_width(), grad_out.len())?;
        let mut g = grad_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let spec = layer.spec;
            if let Some(mask) = &cache.masks.0[l] {
                let keep = 1.0 / (1.0 - spec.dropout_rate);
                for (gi, &k) in g.iter_mut().zip(mask) {
                    *gi = if k { *gi * keep } else { 0.0 };
                }
            }
            for (gi, &z) in g.iter_mut().zip(&cache.pre_activations[l]) {
                *gi *= spec.activation.derivative(z);
            }
            for (b, gi) in grads.biases[l].iter_mut().zip(&g) {
                *b += gi;
            }
            let n_in = spec.input_width;
            let dw = &mut grads.weights[l];
            let need_input_grad = l > 0 || want_input;
            if l == 0 {
                match &cache.input {
                    Input::Sparse(s) => {
                        for (o, &go) in g.iter().enumerate() {
                            if go != 0.0 {
                                for (k, v) in s.iter() {
                                    dw[o * n_in + k] += go * v;
                                }
                            }
                        }
                    }
                    Input::Dense(x) => {
                        for (o, &go) in g.iter().enumerate() {
                            if go != 0.0 {
                                for (d, v) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                                    *d += go * v;
                                }
                            }
                        }
                    }
                }
            } else {
                let x = &cache.outputs[l - 1];
                for (o, &go) in g.iter().enumerate() {
                    if go != 0.0 {
                        for (d, v) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                            *d += go * v;
                        }
                    }
                }
            }
            if need_input_grad {
                let mut gx = vec![0.0; n_in];
                for (o, &go) in g.iter().enumerate() {
                    if go != 0.0 {
                        for (k, gxk) in gx.iter_mut().enumerate() {
                            *gxk += layer.weight(o, k) * go;
                        }
                    }
                }
                g = gx;
            } else {
                return Ok(None);
            }
        }
        Ok(Some(g))
    }

    /// Fraction of zero components over a set of fDNA vectors.
    pub fn sparsity(fdna: &[Vec<f64>]) -> f64 {
        let total: usize = fdna.iter().map(Vec::len).sum();
        if total == 0 {
            return 0.0;
        }
        fdna.iter().flatten().filter(|&&x| x == 0.0).count() as f64 / total as f64
    }

    pub(crate) fn write_into(&self, art: &mut Artifact, prefix: &str) {
        art.push_meta(&format!("{prefix}layers"), self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let s = layer.spec;
            art.push_meta(
                &format!("{prefix}layer"),
                format!("{l} {} {} {} {}", s.input_width, s.output_width, s.activation, s.dropout_rate),
            );
        }
        for (l, layer) in self.layers.iter().enumerate() {
            art.push_blob(&format!("{prefix}w{l}"), layer.weights.clone());
            art.push_blob(&format!("{prefix}b{l}"), layer.bias.clone());
        }
    }

    pub(crate) fn read_from(art: &Artifact, prefix: &str) -> Result<Self> {
        let bad = |m: String| Error::format("model", m);
        let n: usize = art.parse_meta(&format!("{prefix}layers"))?;
        let key = format!("{prefix}layer");
        let mut layers = Vec::with_capacity(n);
        for (l, line) in art.meta_all(&key).enumerate() {
            let f: Vec<&str> = line.split(' ').collect();
            if f.len() != 5 || f[0] != l.to_string() {
                return Err(bad(format!("bad layer line `{line}`")));
            }
            let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad width `{s}`")));
            let spec = LayerSpec::new(
                parse(f[1])?,
                parse(f[2])?,
                f[3].parse()?,
                f[4].parse().map_err(|_| bad(format!("bad dropout `{}`", f[4])))?,
            );
            layers.push(Layer {
                spec,
                weights: art.blob(&format!("{prefix}w{l}"))?.to_vec(),
                bias: art.blob(&format!("{prefix}b{l}"))?.to_vec(),
            });
        }
        if layers.len() != n {
            return Err(bad(format!("header declares {n} layers, found {}", layers.len())));
        }
        Self::from_layers(layers)
    }
}

/// Gaussian weights (σ from `scale`), zero biases.
pub fn init_model(specs: &[LayerSpec], seed: u64, scale: InitScale) -> Result<EmbeddingModel> {
    let mut rng = rng::rng(seed);
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.validate()?;
        let sigma = scale.sigma(spec.input_width);
        let weights = (0..spec.input_width * spec.output_width)
            .map(|_| sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect::<Vec<f64>>();
        layers.push(Layer {
            spec: *spec,
            weights,
            bias: vec![0.0; spec.output_width],
        });
    }
    EmbeddingModel::from_layers(layers)
}

/// Dense per-item feature vectors supplied from outside (the stand-in for image fDNA).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureChannel {
    width: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl FeatureChannel {
    pub fn new(width: usize) -> Self {
        FeatureChannel {
            width,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, v: &[f64]) -> Result<()> {
        check_dim("precomputed feature", self.width, v.len())?;
        let id = id.into();
        if self.index.contains_key(&id) {
            return Err(Error::data(format!("duplicate feature row for `{id}`")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&r| &self.data[r * self.width..(r + 1) * self.width])
    }

    /// Tab-separated: `item_id` then `width` values per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (r, id) in self.ids.iter().enumerate() {
            out.push_str(id);
            for x in &self.data[r * self.width..(r + 1) * self.width] {
                out.push('\t');
                out.push_str(&format!("{x:?}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut channel: Option<FeatureChannel> = None;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let id = cols.next().unwrap();
            let v: Vec<f64> = cols
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::data(format!("features line {}: {e}", n + 1)))?;
            let ch = channel.get_or_insert_with(|| FeatureChannel::new(v.len()));
            if v.len() != ch.width {
                return Err(Error::data(format!(
                    "features line {}: width {} differs from {}",
                    n + 1,
                    v.len(),
                    ch.width
                )));
            }
            ch.insert(id, &v)?;
        }
        channel.ok_or_else(|| Error::data("feature file is empty"))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}

/// Second channel of a combined model.
#[derive(Debug, Clone, PartialEq)]
pub enum SecondChannel {
    /// Frozen tower over the precomputed features.
    Model(EmbeddingModel),
    /// The precomputed features themselves.
    Features,
}

/// Two frozen channels whose outputs are concatenated and condensed by a trainable
/// fully connected ReLU layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedModel {
    pub channel_a: EmbeddingModel,
    pub channel_b: SecondChannel,
    pub merge: EmbeddingModel,
}

impl CombinedModel {
    /// `features_width` is the precomputed feature width, used when the second
    /// channel is the raw feature vector.
    pub fn new(
        channel_a: EmbeddingModel,
        channel_b: SecondChannel,
        features_width: usize,
        output_width: usize,
        seed: u64,
        scale: InitScale,
    ) -> Result<Self> {
        let width_b = match &channel_b {
            SecondChannel::Model(m) => {
                check_dim("second channel input", features_width, m.input_width())?;
                m.output_width()
            }
            SecondChannel::Features => features_width,
        };
        let spec = LayerSpec::new(channel_a.output_width() + width_b, output_width, Activation::Relu, 0.0);
        let merge = init_model(&[spec], seed, scale)?;
        Ok(CombinedModel {
            channel_a,
            channel_b,
            merge,
        })
    }

    pub fn from_parts(channel_a: EmbeddingModel, channel_b: SecondChannel, merge: EmbeddingModel) -> Result<Self> {
        let width_b = match &channel_b {
            SecondChannel::Model(m) => m.output_width(),
            SecondChannel::Features => merge.input_width().saturating_sub(channel_a.output_width()),
        };
        check_dim("merge input", channel_a.output_width() + width_b, merge.input_width())?;
        Ok(CombinedModel {
            channel_a,
            channel_b,
            merge,
        })
    }

    /// Concatenated frozen channel outputs: the merge layer's input.
    pub fn channel_outputs(&self, attributes: &Input, features: Option<&[f64]>) -> Result<Vec<f64>> {
        let features = features.ok_or_else(|| Error::data("precomputed features missing for item"))?;
        let mut out = self.channel_a.infer(attributes)?;
        match &self.channel_b {
            SecondChannel::Model(m) => out.extend(m.infer(&Input::Dense(features.to_vec()))?),
            SecondChannel::Features => {
                check_dim("merge input", self.merge.input_width(), out.len() + features.len())?;
                out.extend_from_slice(features);
            }
        }
        Ok(out)
    }

    pub fn forward(&self, attributes: &Input, features: Option<&[f64]>) -> Result<Vec<f64>> {
        let x = self.channel_outputs(attributes, features)?;
        self.merge.infer(&Input::Dense(x))
    }
}
