//! Layer definitions and parameter storage.
//!
//! Representations are row-major (`n × dim`), so a linear map is `Z · W`
//! with `W` of shape `in × out`.
//!
//! The gated bi-kernel (GBK) layer computes, for node `i`,
//!
//! ```text
//! z'_i = act( z_i W_f + (1/|N(i)|) Σ_{j ∈ N(i)} [ α_ij z_j W_s + (1 - α_ij) z_j W_d ] + b )
//! α_ij = sigmoid( relu([z_i ‖ z_j] W_g1 + b_g1) W_g2 + b_g2 )
//! ```
//!
//! `[z_i ‖ z_j] W_g1` is evaluated as `z_i W_g1[..h] + z_j W_g1[h..]`, which
//! avoids materializing one concatenated row per edge. The neighbor term is
//! evaluated as `z_j W_d + α_ij (z_j W_s − z_j W_d)`, so with `W_s = W_d` the
//! gate contributes an exact zero and the output does not depend on it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bind_params, NamedTensors, ParamVars, Tape, Var};
use crate::error::ModelError;
use crate::graph::{Graph, NeighborIndex};
use crate::tensor::Tensor;

pub const DEFAULT_GATE_HIDDEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Gbk,
    Gcn,
    Sage,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Width of the gate's hidden layer; only meaningful for GBK layers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_hidden_dim: Option<usize>,
}

/// Model families built from homogeneous layer stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Gcn,
    Sage,
    Gbk,
}

impl ModelKind {
    pub fn layer_kind(self) -> LayerKind {
        match self {
            ModelKind::Mlp => LayerKind::Dense,
            ModelKind::Gcn => LayerKind::Gcn,
            ModelKind::Sage => LayerKind::Sage,
            ModelKind::Gbk => LayerKind::Gbk,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Gcn => "gcn",
            ModelKind::Sage => "sage",
            ModelKind::Gbk => "gbk",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" | "dnn" => Ok(ModelKind::Mlp),
            "gcn" => Ok(ModelKind::Gcn),
            "sage" | "graphsage" => Ok(ModelKind::Sage),
            "gbk" => Ok(ModelKind::Gbk),
            other => Err(format!("unknown model `{other}` (expected mlp, gcn, sage or gbk)")),
        }
    }
}

/// `layers` layers of one kind: relu on hidden layers, identity on the
/// output layer that emits `num_classes` logits.
pub fn stack_specs(
    kind: ModelKind,
    in_dim: usize,
    hidden: usize,
    layers: usize,
    num_classes: usize,
    gate_hidden: usize,
) -> Vec<LayerSpec> {
    (0..layers)
        .map(|l| {
            let last = l + 1 == layers;
            LayerSpec {
                kind: kind.layer_kind(),
                in_dim: if l == 0 { in_dim } else { hidden },
                out_dim: if last { num_classes } else { hidden },
                activation: if last {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
                gate_hidden_dim: (kind == ModelKind::Gbk).then_some(gate_hidden),
            }
        })
        .collect()
}

/// Checks layer dims chain from `in_dim` and end in an identity layer.
pub fn validate_specs(specs: &[LayerSpec], in_dim: usize) -> Result<(), ModelError> {
    if specs.is_empty() {
        return Err(ModelError::NoLayers);
    }
    let mut expected_in = in_dim;
    for (l, s) in specs.iter().enumerate() {
        let bad = |message: String| ModelError::InvalidLayer { layer: l, message };
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(bad("dimensions must be positive".into()));
        }
        if s.in_dim != expected_in {
            return Err(bad(format!(
                "in_dim {} does not match incoming width {expected_in}",
                s.in_dim
            )));
        }
        match (s.kind, s.gate_hidden_dim) {
            (LayerKind::Gbk, None | Some(0)) => {
                return Err(bad("gbk layer needs a positive gate_hidden_dim".into()))
            }
            (LayerKind::Gbk, _) | (_, None) => {}
            (_, Some(_)) => return Err(bad("gate_hidden_dim is only valid for gbk".into())),
        }
        expected_in = s.out_dim;
    }
    if specs.last().map(|s| s.activation) != Some(Activation::Identity) {
        return Err(ModelError::InvalidLayer {
            layer: specs.len() - 1,
            message: "output layer must use the identity activation".into(),
        });
    }
    Ok(())
}

pub fn param_name(layer: usize, suffix: &str) -> String {
    format!("layer{layer}.{suffix}")
}

/// `(suffix, shape)` of every parameter of one layer, in a fixed order.
pub fn layer_param_shapes(spec: &LayerSpec) -> Vec<(&'static str, (usize, usize))> {
    let (i, o) = (spec.in_dim, spec.out_dim);
    match spec.kind {
        LayerKind::Gbk => {
            let gh = spec.gate_hidden_dim.unwrap_or(DEFAULT_GATE_HIDDEN);
            vec![
                ("W_f", (i, o)),
                ("W_s", (i, o)),
                ("W_d", (i, o)),
                ("b", (1, o)),
                ("W_g1", (2 * i, gh)),
                ("b_g1", (1, gh)),
                ("W_g2", (gh, 1)),
                ("b_g2", (1, 1)),
            ]
        }
        LayerKind::Gcn | LayerKind::Dense => vec![("W", (i, o)), ("b", (1, o))],
        LayerKind::Sage => vec![("W_f", (i, o)), ("W_s", (i, o)), ("b", (1, o))],
    }
}

/// Biases are excluded from weight decay.
pub fn is_bias(name: &str) -> bool {
    name.rsplit('.').next().is_some_and(|s| s.starts_with('b'))
}

/// Named parameter tensors of a layered model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: NamedTensors,
}

impl ModelParams {
    /// Glorot-uniform weights with bound `√(6 / (fan_in + fan_out))` and zero
    /// biases, drawn from one seeded stream in layer order.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (l, spec) in specs.iter().enumerate() {
            for (suffix, (rows, cols)) in layer_param_shapes(spec) {
                let name = param_name(l, suffix);
                let t = if is_bias(&name) {
                    Tensor::zeros(rows, cols)
                } else {
                    let bound = (6.0 / (rows + cols) as f64).sqrt();
                    let data = (0..rows * cols)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect();
                    Tensor::from_vec(rows, cols, data).expect("sized by construction")
                };
                tensors.insert(name, t);
            }
        }
        Self { tensors }
    }

    pub fn from_tensors(tensors: NamedTensors) -> Self {
        Self { tensors }
    }

    pub fn tensors(&self) -> &NamedTensors {
        &self.tensors
    }

    pub fn into_tensors(self) -> NamedTensors {
        self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    /// Replaces an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), ModelError> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(ModelError::ParamShape {
                name: name.to_string(),
                expected: slot.shape(),
                found: value.shape(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Verifies that exactly the parameters `specs` needs are present with
    /// the right shapes.
    pub fn check(&self, specs: &[LayerSpec]) -> Result<(), ModelError> {
        let mut expected = 0;
        for (l, spec) in specs.iter().enumerate() {
            for (suffix, shape) in layer_param_shapes(spec) {
                let name = param_name(l, suffix);
                let t = self
                    .tensors
                    .get(&name)
                    .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
                if t.shape() != shape {
                    return Err(ModelError::ParamShape {
                        name,
                        expected: shape,
                        found: t.shape(),
                    });
                }
                expected += 1;
            }
        }
        if expected != self.tensors.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} parameters present, {expected} expected",
                self.tensors.len()
            )));
        }
        Ok(())
    }
}

/// Graph data a forward pass reads, borrowed for the tape's lifetime.
#[derive(Clone, Copy)]
pub struct GraphInputs<'a> {
    pub features: &'a Tensor,
    pub index: &'a NeighborIndex,
    /// `D⁻¹(A + I)`; required only by GCN layers.
    pub adjacency: Option<&'a Tensor>,
}

impl<'a> GraphInputs<'a> {
    pub fn new(graph: &'a Graph, adjacency: Option<&'a Tensor>) -> Self {
        Self {
            features: graph.features(),
            index: graph.index(),
            adjacency,
        }
    }
}

pub fn needs_adjacency(specs: &[LayerSpec]) -> bool {
    specs.iter().any(|s| s.kind == LayerKind::Gcn)
}

/// Where GBK layers get their per-edge α.
#[derive(Debug, Clone, Copy)]
pub enum Gates<'g> {
    /// From the learned gate network.
    Learned,
    /// Fixed `edges × 1` columns, one per GBK layer (e.g. the oracle
    /// `𝟙(y_i = y_j)`).
    Fixed(&'g [Tensor]),
}

/// Handles produced by [`forward_on_tape`].
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Var,
    /// Per-GBK-layer `edges × 1` gate values, in layer order.
    pub alphas: Vec<Var>,
    /// Input of the final layer.
    pub penultimate: Var,
}

/// Records a full forward pass on `tape`.
pub fn forward_on_tape<'a>(
    tape: &mut Tape<'a>,
    specs: &[LayerSpec],
    params: &ParamVars,
    inputs: &GraphInputs<'a>,
    gates: Gates<'_>,
) -> Result<Forward, ModelError> {
    validate_specs(specs, inputs.features.cols())?;
    let gbk_layers = specs.iter().filter(|s| s.kind == LayerKind::Gbk).count();
    if let Gates::Fixed(fixed) = gates {
        if fixed.len() != gbk_layers {
            return Err(ModelError::GateOverride {
                expected: gbk_layers,
                found: fixed.len(),
            });
        }
    }
    let p = |l: usize, suffix: &str| -> Result<Var, ModelError> {
        let name = param_name(l, suffix);
        params
            .get(&name)
            .copied()
            .ok_or(ModelError::MissingParam(name))
    };

    let mut z = tape.constant_ref(inputs.features);
    let mut penultimate = z;
    let mut alphas = Vec::new();
    for (l, spec) in specs.iter().enumerate() {
        penultimate = z;
        let pre = match spec.kind {
            LayerKind::Dense => {
                let h = tape.matmul(z, p(l, "W")?)?;
                tape.add_row(h, p(l, "b")?)?
            }
            LayerKind::Gcn => {
                let adjacency = inputs.adjacency.ok_or_else(|| ModelError::InvalidLayer {
                    layer: l,
                    message: "gcn layer needs the normalized adjacency".into(),
                })?;
                let a = tape.constant_ref(adjacency);
                let h = tape.matmul(z, p(l, "W")?)?;
                let h = tape.matmul(a, h)?;
                tape.add_row(h, p(l, "b")?)?
            }
            LayerKind::Sage => {
                let self_term = tape.matmul(z, p(l, "W_f")?)?;
                let h = tape.matmul(z, p(l, "W_s")?)?;
                let agg = tape.neighbor_mean(h, inputs.index, None)?;
                let h = tape.add(self_term, agg)?;
                tape.add_row(h, p(l, "b")?)?
            }
            LayerKind::Gbk => {
                let alpha = match gates {
                    Gates::Learned => gate_on_tape(
                        tape,
                        z,
                        spec.in_dim,
                        [p(l, "W_g1")?, p(l, "b_g1")?, p(l, "W_g2")?, p(l, "b_g2")?],
                        inputs.index,
                    )?,
                    Gates::Fixed(fixed) => {
                        let col = &fixed[alphas.len()];
                        if col.shape() != (inputs.index.num_edges(), 1) {
                            return Err(ModelError::InvalidLayer {
                                layer: l,
                                message: format!(
                                    "fixed gate has shape {:?}, expected ({}, 1)",
                                    col.shape(),
                                    inputs.index.num_edges()
                                ),
                            });
                        }
                        tape.constant(col.clone())
                    }
                };
                alphas.push(alpha);
                bi_kernel_on_tape(
                    tape,
                    z,
                    alpha,
                    [p(l, "W_f")?, p(l, "W_s")?, p(l, "W_d")?, p(l, "b")?],
                    inputs.index,
                )?
            }
        };
        z = match spec.activation {
            Activation::Relu => tape.relu(pre),
            Activation::Identity => pre,
        };
    }
    Ok(Forward {
        logits: z,
        alphas,
        penultimate,
    })
}

/// Per-edge gate `α = sigmoid(relu([z_src ‖ z_dst] W_g1 + b_g1) W_g2 + b_g2)`,
/// returned as an `edges × 1` column.
pub fn gate_on_tape<'a>(
    tape: &mut Tape<'a>,
    z: Var,
    in_dim: usize,
    [w_g1, b_g1, w_g2, b_g2]: [Var; 4],
    index: &'a NeighborIndex,
) -> Result<Var, ModelError> {
    let w_src = tape.slice_rows(w_g1, 0, in_dim)?;
    let w_dst = tape.slice_rows(w_g1, in_dim, in_dim)?;
    let from_src = tape.matmul(z, w_src)?;
    let from_dst = tape.matmul(z, w_dst)?;
    let per_src = tape.gather_rows(from_src, index.sources())?;
    let per_dst = tape.gather_rows(from_dst, index.targets())?;
    let h = tape.add(per_src, per_dst)?;
    let h = tape.add_row(h, b_g1)?;
    let h = tape.relu(h);
    let s = tape.matmul(h, w_g2)?;
    let s = tape.add_row(s, b_g2)?;
    Ok(tape.sigmoid(s))
}

/// Pre-activation bi-kernel aggregation with given per-edge gates.
fn bi_kernel_on_tape<'a>(
    tape: &mut Tape<'a>,
    z: Var,
    alpha: Var,
    [w_f, w_s, w_d, b]: [Var; 4],
    index: &'a NeighborIndex,
) -> Result<Var, ModelError> {
    let self_term = tape.matmul(z, w_f)?;
    let similar = tape.matmul(z, w_s)?;
    let dissimilar = tape.matmul(z, w_d)?;
    let neg_dissimilar = tape.scale(dissimilar, -1.0);
    let contrast = tape.add(similar, neg_dissimilar)?;
    let agg_d = tape.neighbor_mean(dissimilar, index, None)?;
    let agg_c = tape.neighbor_mean(contrast, index, Some(alpha))?;
    let h = tape.add(self_term, agg_d)?;
    let h = tape.add(h, agg_c)?;
    Ok(tape.add_row(h, b)?)
}

/// Values of a forward pass without gradients.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub logits: Tensor,
    pub alphas: Vec<Tensor>,
    pub penultimate: Tensor,
}

pub fn model_forward(
    specs: &[LayerSpec],
    params: &ModelParams,
    inputs: &GraphInputs<'_>,
    gates: Gates<'_>,
) -> Result<ModelOutput, ModelError> {
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params.tensors());
    let fwd = forward_on_tape(&mut tape, specs, &vars, inputs, gates)?;
    Ok(ModelOutput {
        logits: tape.value(fwd.logits).clone(),
        alphas: fwd.alphas.iter().map(|&a| tape.value(a).clone()).collect(),
        penultimate: tape.value(fwd.penultimate).clone(),
    })
}

/// Gate values of GBK layer `layer` applied to representations `z`.
pub fn gate_scores(
    params: &ModelParams,
    layer: usize,
    spec: &LayerSpec,
    z: &Tensor,
    index: &NeighborIndex,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let vars = layer_vars(&mut tape, params, layer, &["W_g1", "b_g1", "W_g2", "b_g2"])?;
    let alpha = gate_on_tape(
        &mut tape,
        zv,
        spec.in_dim,
        [vars[0], vars[1], vars[2], vars[3]],
        index,
    )?;
    Ok(tape.value(alpha).clone())
}

/// One GBK layer: `(z_next, α)`.
pub fn gbk_layer_forward(
    params: &ModelParams,
    layer: usize,
    spec: &LayerSpec,
    z: &Tensor,
    index: &NeighborIndex,
) -> Result<(Tensor, Tensor), ModelError> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let v = layer_vars(
        &mut tape,
        params,
        layer,
        &["W_g1", "b_g1", "W_g2", "b_g2", "W_f", "W_s", "W_d", "b"],
    )?;
    let alpha = gate_on_tape(&mut tape, zv, spec.in_dim, [v[0], v[1], v[2], v[3]], index)?;
    let pre = bi_kernel_on_tape(&mut tape, zv, alpha, [v[4], v[5], v[6], v[7]], index)?;
    let out = activate(&mut tape, pre, spec.activation);
    Ok((tape.value(out).clone(), tape.value(alpha).clone()))
}

/// One GCN layer `act(Â z W + b)`.
pub fn gcn_layer_forward(
    params: &ModelParams,
    layer: usize,
    spec: &LayerSpec,
    z: &Tensor,
    adjacency: &Tensor,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let a = tape.constant(adjacency.clone());
    let v = layer_vars(&mut tape, params, layer, &["W", "b"])?;
    let h = tape.matmul(zv, v[0])?;
    let h = tape.matmul(a, h)?;
    let pre = tape.add_row(h, v[1])?;
    let out = activate(&mut tape, pre, spec.activation);
    Ok(tape.value(out).clone())
}

/// One mean-aggregator SAGE layer `act(z_i W_f + mean_{N(i)} z_j W_s + b)`.
pub fn sage_layer_forward(
    params: &ModelParams,
    layer: usize,
    spec: &LayerSpec,
    z: &Tensor,
    index: &NeighborIndex,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let v = layer_vars(&mut tape, params, layer, &["W_f", "W_s", "b"])?;
    let self_term = tape.matmul(zv, v[0])?;
    let h = tape.matmul(zv, v[1])?;
    let agg = tape.neighbor_mean(h, index, None)?;
    let h = tape.add(self_term, agg)?;
    let pre = tape.add_row(h, v[2])?;
    let out = activate(&mut tape, pre, spec.activation);
    Ok(tape.value(out).clone())
}

fn activate(tape: &mut Tape<'_>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Identity => x,
    }
}

fn layer_vars(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    layer: usize,
    suffixes: &[&str],
) -> Result<Vec<Var>, ModelError> {
    suffixes
        .iter()
        .map(|s| {
            let name = param_name(layer, s);
            params
                .get(&name)
                .map(|t| tape.param(t.clone()))
                .ok_or(ModelError::MissingParam(name))
        })
        .collect()
}

/// On-disk checkpoint: layer specs, seed and every parameter as
/// `{shape, values}`. Values are written in shortest round-trip decimal
/// form, so loading reproduces every bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub specs: Vec<LayerSpec>,
    pub seed: u64,
    pub params: BTreeMap<String, StoredTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredTensor {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn new(specs: &[LayerSpec], seed: u64, params: &ModelParams) -> Self {
        Self {
            specs: specs.to_vec(),
            seed,
            params: params
                .iter()
                .map(|(name, t)| {
                    (
                        name.clone(),
                        StoredTensor {
                            shape: [t.rows(), t.cols()],
                            values: t.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn to_params(&self) -> Result<ModelParams, ModelError> {
        let mut tensors = BTreeMap::new();
        for (name, st) in &self.params {
            let t = Tensor::from_vec(st.shape[0], st.shape[1], st.values.clone())
                .map_err(|e| ModelError::Checkpoint(format!("{name}: {e}")))?;
            tensors.insert(name.clone(), t);
        }
        let params = ModelParams::from_tensors(tensors);
        params.check(&self.specs)?;
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::new_undirected(
            vec![(0, 1), (1, 2)],
            Tensor::from_rows(&[[1.0, 0.5], [-1.0, 2.0], [0.25, -0.75]]).unwrap(),
            vec![0, 1, 0],
            2,
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let specs = vec![LayerSpec {
            kind: LayerKind::Dense,
            in_dim: 100,
            out_dim: 100,
            activation: Activation::Identity,
            gate_hidden_dim: None,
        }];
        let a = ModelParams::init(&specs, 11);
        assert_eq!(a, ModelParams::init(&specs, 11));
        assert_ne!(a, ModelParams::init(&specs, 12));
        let bound = (6.0f64 / 200.0).sqrt();
        assert!(a.get("layer0.W").unwrap().max_abs() <= bound);
        assert_eq!(a.get("layer0.b").unwrap().max_abs(), 0.0);
    }

    #[test]
    fn spec_validation() {
        assert_eq!(validate_specs(&[], 3), Err(ModelError::NoLayers));
        let mut specs = stack_specs(ModelKind::Gbk, 3, 4, 2, 2, 8);
        assert!(validate_specs(&specs, 3).is_ok());
        assert!(validate_specs(&specs, 5).is_err());
        specs[1].activation = Activation::Relu;
        assert!(validate_specs(&specs, 3).is_err());
        let mut gcn = stack_specs(ModelKind::Gcn, 3, 4, 2, 2, 8);
        gcn[0].gate_hidden_dim = Some(4);
        assert!(validate_specs(&gcn, 3).is_err());
    }

    #[test]
    fn zero_gate_params_give_half() {
        let g = path3();
        let specs = stack_specs(ModelKind::Gbk, 2, 3, 1, 2, 4);
        let mut params = ModelParams::init(&specs, 0);
        for s in ["W_g1", "b_g1", "W_g2", "b_g2"] {
            let name = param_name(0, s);
            let shape = params.get(&name).unwrap().shape();
            params.set(&name, Tensor::zeros(shape.0, shape.1)).unwrap();
        }
        let alpha = gate_scores(&params, 0, &specs[0], g.features(), g.index()).unwrap();
        assert!(alpha.data().iter().all(|&a| a == 0.5));
    }

    #[test]
    fn gcn_identity_weight_averages_endpoints() {
        let g = Graph::new_undirected(
            vec![(0, 1)],
            Tensor::from_rows(&[[2.0, 0.0], [0.0, 4.0]]).unwrap(),
            vec![0, 1],
            2,
        )
        .unwrap();
        let specs = stack_specs(ModelKind::Gcn, 2, 2, 1, 2, 0);
        let mut params = ModelParams::init(&specs, 0);
        params.set("layer0.W", Tensor::identity(2)).unwrap();
        let out =
            gcn_layer_forward(&params, 0, &specs[0], g.features(), &g.normalized_adjacency())
                .unwrap();
        assert_eq!(out.row(0), &[1.0, 2.0]);
        assert_eq!(out.row(1), &[1.0, 2.0]);
    }

    #[test]
    fn gcn_zero_features_give_bias() {
        let g = path3();
        let specs = stack_specs(ModelKind::Gcn, 2, 2, 1, 2, 0);
        let mut params = ModelParams::init(&specs, 3);
        params.set("layer0.b", Tensor::from_rows(&[[0.5, -1.0]]).unwrap()).unwrap();
        let out = gcn_layer_forward(
            &params,
            0,
            &specs[0],
            &Tensor::zeros(3, 2),
            &g.normalized_adjacency(),
        )
        .unwrap();
        for r in 0..3 {
            assert_eq!(out.row(r), &[0.5, -1.0]);
        }
    }

    #[test]
    fn sage_neighbor_means_and_isolated_node() {
        let g = Graph::new(
            vec![(0, 1), (0, 2)],
            Tensor::from_rows(&[[1.0, 1.0], [2.0, 0.0], [0.0, 4.0]]).unwrap(),
            vec![0, 1, 0],
            2,
        )
        .unwrap();
        let specs = stack_specs(ModelKind::Sage, 2, 2, 1, 2, 0);
        let mut params = ModelParams::init(&specs, 5);
        params.set("layer0.W_f", Tensor::zeros(2, 2)).unwrap();
        params.set("layer0.W_s", Tensor::identity(2)).unwrap();
        let out = sage_layer_forward(&params, 0, &specs[0], g.features(), g.index()).unwrap();
        assert_eq!(out.row(0), &[1.0, 2.0]);
        assert_eq!(out.row(1), &[0.0, 0.0]);

        // isolated node keeps only its self term
        let params = ModelParams::init(&specs, 5);
        let out = sage_layer_forward(&params, 0, &specs[0], g.features(), g.index()).unwrap();
        let wf = params.get("layer0.W_f").unwrap();
        let expect = g.features().gather_rows(&[1]).matmul(wf).unwrap();
        assert_eq!(out.row(1), expect.row(0));
    }

    #[test]
    fn gbk_isolated_node_uses_self_term_only() {
        let g = Graph::new(
            vec![(0, 1)],
            Tensor::from_rows(&[[1.0, 2.0], [3.0, -1.0]]).unwrap(),
            vec![0, 1],
            2,
        )
        .unwrap();
        let specs = stack_specs(ModelKind::Gbk, 2, 2, 1, 3, 4);
        let mut params = ModelParams::init(&specs, 9);
        params.set("layer0.b", Tensor::from_rows(&[[0.1, 0.2, 0.3]]).unwrap()).unwrap();
        let (out, alpha) =
            gbk_layer_forward(&params, 0, &specs[0], g.features(), g.index()).unwrap();
        assert_eq!(alpha.shape(), (1, 1));
        let wf = params.get("layer0.W_f").unwrap();
        let expect = g.features().gather_rows(&[1]).matmul(wf).unwrap();
        for c in 0..3 {
            assert!((out.get(1, c) - (expect.get(0, c) + 0.1 * (c + 1) as f64)).abs() < 1e-15);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let specs = stack_specs(ModelKind::Gbk, 3, 4, 2, 2, 5);
        let params = ModelParams::init(&specs, 77);
        let ck = Checkpoint::new(&specs, 77, &params);
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_params().unwrap(), params);
    }

    #[test]
    fn checkpoint_shape_mismatch_rejected() {
        let specs = stack_specs(ModelKind::Mlp, 3, 4, 2, 2, 0);
        let params = ModelParams::init(&specs, 1);
        let mut ck = Checkpoint::new(&specs, 1, &params);
        ck.specs[0].out_dim = 5;
        assert!(ck.to_params().is_err());
    }

    #[test]
    fn bias_names() {
        assert!(is_bias("layer0.b"));
        assert!(is_bias("layer1.b_g2"));
        assert!(!is_bias("layer0.W_g1"));
    }
}
