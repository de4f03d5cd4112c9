//! The disparity network: a multi-scale dilated-convolution feature pyramid
//! over the raw SAI stack, a depthwise-separable encoder, a residual trunk,
//! and a single-channel 1x1 regression head.
//!
//! Every convolution except the head is followed by batch norm and ReLU and
//! preserves spatial resolution (stride 1, "same" zero padding). Residual
//! blocks pit a one-layer depthwise-separable shortcut against a main path
//! of three depthwise-separable layers and sum the two.

use crate::error::{Error, Result};
use crate::graph::{BnId, Graph, NodeId, Op};
use crate::kernels::{ConvSpec, Mode, BN_EPSILON, BN_MOMENTUM};
use crate::serialize::{self, Entry};
use crate::tensor::{Element, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Input pattern: how many sub-aperture views feed the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Sai9,
    Sai25,
    Sai81,
}

impl Variant {
    pub fn from_sai_count(count: usize) -> Result<Self> {
        match count {
            9 => Ok(Variant::Sai9),
            25 => Ok(Variant::Sai25),
            81 => Ok(Variant::Sai81),
            other => Err(Error::InvalidConfig(format!(
                "variant must be 9, 25 or 81 SAIs, got {other}"
            ))),
        }
    }

    pub fn sai_count(self) -> usize {
        match self {
            Variant::Sai9 => 9,
            Variant::Sai25 => 25,
            Variant::Sai81 => 81,
        }
    }

    /// Side of the centered view sub-grid (3, 5 or 9).
    pub fn side(self) -> usize {
        match self {
            Variant::Sai9 => 3,
            Variant::Sai25 => 5,
            Variant::Sai81 => 9,
        }
    }

    pub fn input_channels(self) -> usize {
        3 * self.sai_count()
    }
}

/// The multi-scale front end: parallel 3x3 dilated convolutions applied to
/// the raw input stack. Six branches by default, rates [1, 1, 2, 4, 8, 16].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyramidConfig {
    pub dilations: Vec<usize>,
    pub branch_channels: usize,
    pub kernel: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            dilations: vec![1, 1, 2, 4, 8, 16],
            branch_channels: 64,
            kernel: 3,
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::InvalidConfig(
                "pyramid dilation rates must be positive and non-empty".into(),
            ));
        }
        if self.branch_channels == 0 {
            return Err(Error::InvalidConfig("branch channels must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) || self.kernel == 0 {
            return Err(Error::InvalidConfig(format!(
                "pyramid kernel must be odd, got {}",
                self.kernel
            )));
        }
        Ok(())
    }

    /// Largest effective kernel extent over the branches: k + (k-1)(d-1).
    pub fn receptive_field(&self) -> usize {
        self.dilations
            .iter()
            .map(|&d| self.kernel + (self.kernel - 1) * (d - 1))
            .max()
            .unwrap_or(self.kernel)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub pyramid: PyramidConfig,
    pub encoder_channels: usize,
    pub trunk_channels: usize,
    pub blocks: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Widths calibrated so the trainable-parameter counts sit on the
    /// published figures for all three variants (64-channel branches,
    /// 160-channel trunk, 6 residual blocks).
    pub fn calibrated(variant: Variant, seed: u64) -> Self {
        ModelConfig {
            variant,
            pyramid: PyramidConfig::default(),
            encoder_channels: 160,
            trunk_channels: 160,
            blocks: 6,
            seed,
        }
    }

    /// Small widths for CPU-scale experiments; same topology and receptive
    /// field as the calibrated preset.
    pub fn compact(variant: Variant, seed: u64) -> Self {
        ModelConfig {
            variant,
            pyramid: PyramidConfig {
                dilations: vec![1, 1, 2, 4, 8, 16],
                branch_channels: 16,
                kernel: 3,
            },
            encoder_channels: 32,
            trunk_channels: 32,
            blocks: 3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pyramid.validate()?;
        if self.encoder_channels == 0 || self.trunk_channels == 0 || self.blocks == 0 {
            return Err(Error::InvalidConfig(
                "encoder/trunk channels and block count must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.variant.input_channels()
    }

    /// Longest input-to-output half-width: pyramid radius plus one pixel per
    /// depthwise 3x3 stage after it.
    pub fn receptive_radius(&self) -> usize {
        (self.pyramid.receptive_field() - 1) / 2 + 1 + 3 * self.blocks
    }

    pub fn to_key_values(&self) -> String {
        let dil: Vec<String> = self.pyramid.dilations.iter().map(|d| d.to_string()).collect();
        format!(
            "variant={}\ndilations={}\nbranch_channels={}\nkernel={}\nencoder_channels={}\ntrunk_channels={}\nblocks={}\nseed={}\n",
            self.variant.sai_count(),
            dil.join(","),
            self.pyramid.branch_channels,
            self.pyramid.kernel,
            self.encoder_channels,
            self.trunk_channels,
            self.blocks,
            self.seed,
        )
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut variant = None;
        let mut dilations = None;
        let mut branch_channels = None;
        let mut kernel = None;
        let mut encoder_channels = None;
        let mut trunk_channels = None;
        let mut blocks = None;
        let mut seed = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!("bad config line '{line}'")));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "variant" => variant = Some(Variant::from_sai_count(parse(key, value)?)?),
                "dilations" => {
                    let mut rates = Vec::new();
                    for part in value.split(',') {
                        rates.push(parse("dilations", part.trim())?);
                    }
                    dilations = Some(rates);
                }
                "branch_channels" => branch_channels = Some(parse(key, value)?),
                "kernel" => kernel = Some(parse(key, value)?),
                "encoder_channels" => encoder_channels = Some(parse(key, value)?),
                "trunk_channels" => trunk_channels = Some(parse(key, value)?),
                "blocks" => blocks = Some(parse(key, value)?),
                "seed" => seed = Some(parse(key, value)?),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown model config key '{other}'"
                    )))
                }
            }
        }
        let cfg = ModelConfig {
            variant: variant.ok_or_else(|| missing("variant"))?,
            pyramid: PyramidConfig {
                dilations: dilations.ok_or_else(|| missing("dilations"))?,
                branch_channels: branch_channels.ok_or_else(|| missing("branch_channels"))?,
                kernel: kernel.ok_or_else(|| missing("kernel"))?,
            },
            encoder_channels: encoder_channels.ok_or_else(|| missing("encoder_channels"))?,
            trunk_channels: trunk_channels.ok_or_else(|| missing("trunk_channels"))?,
            blocks: blocks.ok_or_else(|| missing("blocks"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("bad value for {key}: {e}")))
}

fn missing(key: &str) -> Error {
    Error::InvalidConfig(format!("missing model config key '{key}'"))
}

/// One conv "layer" as the architecture counts them: a standard convolution
/// or a depthwise-separable pair, plus the batch norm and ReLU that follow
/// everywhere except the head.
#[derive(Debug, Clone)]
pub struct LayerInfo {
    pub name: String,
    pub convs: Vec<NodeId>,
    pub bn: Option<NodeId>,
    pub relu: Option<NodeId>,
}

pub struct Model<E: Element> {
    graph: Graph<E>,
    config: ModelConfig,
    input: NodeId,
    output: NodeId,
    layers: Vec<LayerInfo>,
    bn_ids: Vec<BnId>,
}

/// Fan-in-scaled uniform initialization for a conv weight tensor.
fn init_conv<E: Element>(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<E> {
    let fan_in = (shape.c * shape.h * shape.w) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let data = (0..shape.count())
        .map(|_| E::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches generated data")
}

struct Builder<'g, E: Element> {
    graph: &'g mut Graph<E>,
    rng: ChaCha8Rng,
    layers: Vec<LayerInfo>,
    bn_ids: Vec<BnId>,
}

impl<'g, E: Element> Builder<'g, E> {
    fn bn_relu(&mut self, name: &str, input: NodeId, channels: usize, convs: Vec<NodeId>) -> Result<NodeId> {
        let gamma = self.graph.parameter(
            format!("{name}.bn.gamma"),
            Tensor::filled(Shape::new(1, channels, 1, 1), E::ONE),
        );
        let beta = self.graph.parameter(
            format!("{name}.bn.beta"),
            Tensor::zeros(Shape::new(1, channels, 1, 1)),
        );
        let bn_id = self.graph.bn_state(channels, BN_MOMENTUM, BN_EPSILON);
        self.bn_ids.push(bn_id);
        let bn = self.graph.batch_norm(input, bn_id, gamma, beta)?;
        let relu = self.graph.relu(bn)?;
        self.layers.push(LayerInfo {
            name: name.to_string(),
            convs,
            bn: Some(bn),
            relu: Some(relu),
        });
        Ok(relu)
    }

    /// 3x3 depthwise + 1x1 pointwise, then BN and ReLU.
    fn dwsep(&mut self, name: &str, input: NodeId, in_ch: usize, out_ch: usize) -> Result<NodeId> {
        let dw_w = self.graph.parameter(
            format!("{name}.dw.weight"),
            init_conv(&mut self.rng, Shape::new(in_ch, 1, 3, 3)),
        );
        let pw_w = self.graph.parameter(
            format!("{name}.pw.weight"),
            init_conv(&mut self.rng, Shape::new(out_ch, in_ch, 1, 1)),
        );
        let dw_spec = ConvSpec::same(3, 1, in_ch, in_ch)?;
        let pw_spec = ConvSpec::same(1, 1, in_ch, out_ch)?;
        let dw = self.graph.conv2d_grouped(input, dw_w, None, dw_spec, in_ch)?;
        let pw = self.graph.conv2d(dw, pw_w, None, pw_spec)?;
        self.bn_relu(name, pw, out_ch, vec![dw, pw])
    }
}

/// Assemble the network for a config; parameters are seeded deterministically.
pub fn build_model<E: Element>(config: ModelConfig) -> Result<Model<E>> {
    config.validate()?;
    let mut graph = Graph::new();
    let in_ch = config.input_channels();
    // the build-time input is a placeholder; replay adapts to any spatial size
    let input = graph.input(Tensor::zeros(Shape::new(1, in_ch, 8, 8)));

    let mut b = Builder {
        graph: &mut graph,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        layers: Vec::new(),
        bn_ids: Vec::new(),
    };

    // (a) parallel dilated branches over the raw SAI stack
    let branch_ch = config.pyramid.branch_channels;
    let mut branch_outs = Vec::with_capacity(config.pyramid.dilations.len());
    for (i, &d) in config.pyramid.dilations.iter().enumerate() {
        let name = format!("pyramid.{i}");
        let w = b.graph.parameter(
            format!("{name}.weight"),
            init_conv(&mut b.rng, Shape::new(branch_ch, in_ch, config.pyramid.kernel, config.pyramid.kernel)),
        );
        let spec = ConvSpec::same(config.pyramid.kernel, d, in_ch, branch_ch)?;
        let conv = b.graph.conv2d(input, w, None, spec)?;
        branch_outs.push(b.bn_relu(&name, conv, branch_ch, vec![conv])?);
    }

    // (b) multi-scale features concatenated along the channel axis
    let concat = b.graph.concat_channels(&branch_outs)?;
    let concat_ch = branch_ch * config.pyramid.dilations.len();

    // (c) depthwise-separable encoder
    let mut trunk = b.dwsep("encoder", concat, concat_ch, config.encoder_channels)?;

    // (d) residual blocks: one-layer shortcut vs three-layer main path
    let mut ch = config.encoder_channels;
    for i in 0..config.blocks {
        let out_ch = config.trunk_channels;
        let shortcut = b.dwsep(&format!("block.{i}.shortcut"), trunk, ch, out_ch)?;
        let m1 = b.dwsep(&format!("block.{i}.main.0"), trunk, ch, out_ch)?;
        let m2 = b.dwsep(&format!("block.{i}.main.1"), m1, out_ch, out_ch)?;
        let m3 = b.dwsep(&format!("block.{i}.main.2"), m2, out_ch, out_ch)?;
        trunk = b.graph.add(shortcut, m3)?;
        ch = out_ch;
    }

    // (e) single-channel 1x1 head with bias; no norm, no activation
    let head_w = b.graph.parameter("head.weight", init_conv(&mut b.rng, Shape::new(1, ch, 1, 1)));
    let head_b = b.graph.parameter("head.bias", Tensor::zeros(Shape::new(1, 1, 1, 1)));
    let mut head_spec = ConvSpec::same(1, 1, ch, 1)?;
    head_spec.has_bias = true;
    let output = b.graph.conv2d(trunk, head_w, Some(head_b), head_spec)?;
    b.layers.push(LayerInfo {
        name: "head".into(),
        convs: vec![output],
        bn: None,
        relu: None,
    });

    let layers = std::mem::take(&mut b.layers);
    let bn_ids = std::mem::take(&mut b.bn_ids);
    Ok(Model {
        graph,
        config,
        input,
        output,
        layers,
        bn_ids,
    })
}

impl<E: Element> Model<E> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &Graph<E> {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph<E> {
        &mut self.graph
    }

    pub fn input_node(&self) -> NodeId {
        self.input
    }

    pub fn output_node(&self) -> NodeId {
        self.output
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.graph.set_mode(mode);
    }

    /// Run the network on a stacked SAI tensor; output is (N, 1, H, W).
    pub fn forward(&mut self, input: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let expected = self.config.input_channels();
        if input.shape().c != expected {
            return Err(Error::ChannelMismatch {
                context: "model input".into(),
                expected,
                actual: input.shape().c,
            });
        }
        self.set_mode(mode);
        self.graph.set_input(self.input, input.clone())?;
        self.graph.replay_until(self.output)?;
        Ok(self.graph.out(self.output).clone())
    }

    /// Total trainable scalars: conv weights, biases, and batch-norm
    /// scale/shift. Running statistics are not trainable.
    pub fn param_count(&self) -> usize {
        self.graph.trainable_scalars()
    }

    /// Checks the normalization rule over recorded layers: every layer except
    /// the 1x1 single-channel head carries BN + ReLU. Returns the list of
    /// layer names without them (expected: just "head").
    pub fn unnormalized_layers(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| l.bn.is_none() || l.relu.is_none())
            .map(|l| l.name.as_str())
            .collect()
    }

    /// Head conv properties: (kernel, out_channels, has_bias).
    pub fn head_spec(&self) -> (usize, usize, bool) {
        let head = self.layers.last().expect("model has layers");
        match self.graph.op(head.convs[0]) {
            Op::Conv2d { spec, .. } => (spec.kernel, spec.out_channels, spec.has_bias),
            _ => unreachable!("head is a conv node"),
        }
    }

    // ---- persistence ----------------------------------------------------

    pub fn to_entries(&self, prefix: &str) -> Vec<Entry> {
        let mut entries = Vec::new();
        for id in self.graph.param_ids() {
            let name = format!("{prefix}{}", self.graph.param_name(id));
            entries.push(serialize::tensor_entry(&name, self.graph.param(id)));
        }
        for (i, &bn) in self.bn_ids.iter().enumerate() {
            let state = self.graph.bn(bn);
            entries.push(serialize::vec_entry(
                &format!("{prefix}bn.{i}.running_mean"),
                &state.running_mean,
            ));
            entries.push(serialize::vec_entry(
                &format!("{prefix}bn.{i}.running_var"),
                &state.running_var,
            ));
        }
        entries
    }

    pub fn load_entries(&mut self, entries: &[Entry], prefix: &str) -> Result<()> {
        let find = |name: String| {
            entries
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::BadContainer(format!("missing entry '{name}'")))
        };
        for id in self.graph.param_ids().collect::<Vec<_>>() {
            let name = format!("{prefix}{}", self.graph.param_name(id));
            let entry = find(name)?;
            let expected = self.graph.param(id).shape();
            *self.graph.param_mut(id) = serialize::entry_to_tensor(entry, expected)?;
        }
        for (i, &bn) in self.bn_ids.clone().iter().enumerate() {
            let channels = self.graph.bn(bn).running_mean.len();
            let mean = serialize::entry_to_vec(
                find(format!("{prefix}bn.{i}.running_mean"))?,
                channels,
            )?;
            let var = serialize::entry_to_vec(
                find(format!("{prefix}bn.{i}.running_var"))?,
                channels,
            )?;
            let state = self.graph.bn_mut(bn);
            state.running_mean = mean;
            state.running_var = var;
        }
        Ok(())
    }

    /// Write the parameter container and its plain-text config sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        serialize::write_container(path, &self.to_entries(""))?;
        std::fs::write(sidecar_path(path), self.config.to_key_values())
            .map_err(|e| Error::io(sidecar_path(path), e))
    }
}

pub fn sidecar_path(container: &Path) -> std::path::PathBuf {
    container.with_extension("cfg")
}

/// Read the sidecar, rebuild the architecture, and fill in stored values.
pub fn load_model<E: Element>(path: &Path) -> Result<Model<E>> {
    let sidecar = sidecar_path(path);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let config = ModelConfig::from_key_values(&text)?;
    let mut model = build_model(config)?;
    let entries = serialize::read_container(path)?;
    model.load_entries(&entries, "")?;
    Ok(model)
}

/// Closed-form count difference between two variants of the same widths:
/// only the pyramid's input channels change.
pub fn variant_param_difference(config: &ModelConfig, a: Variant, b: Variant) -> usize {
    let k2 = config.pyramid.kernel * config.pyramid.kernel;
    config.pyramid.dilations.len()
        * (a.input_channels() - b.input_channels())
        * k2
        * config.pyramid.branch_channels
}
