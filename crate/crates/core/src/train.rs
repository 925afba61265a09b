//! Loss assembly, AdamW, the full-batch training loop, evaluation and grid
//! search.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    consistency_complexity, deserialize_extended_opt, gate_accuracy, serialize_extended_opt,
};
use crate::autodiff::{bind_params, NamedTensors, Tape, Var};
use crate::error::{ModelError, TrainError};
use crate::graph::Graph;
use crate::models::{
    forward_on_tape, is_bias, model_forward, needs_adjacency, stack_specs, validate_specs,
    Forward, Gates, GraphInputs, LayerKind, LayerSpec, ModelKind, ModelOutput, ModelParams,
    DEFAULT_GATE_HIDDEN,
};
use crate::splits::{edge_targets_within, gate_targets, make_splits, GateTarget, SplitMasks};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const MAX_LAMBDA: f64 = 64.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub hidden: usize,
    pub layers: usize,
    pub gate_hidden: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Weight of the gate loss; 0 disables it.
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Train, validation and test fractions for stratified splits.
    pub split: [f64; 3],
    /// Replace learned gates with `𝟙(y_i = y_j)`. Analysis only.
    #[serde(default)]
    pub oracle_gate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Gbk,
            hidden: 16,
            layers: 2,
            gate_hidden: DEFAULT_GATE_HIDDEN,
            learning_rate: 1e-2,
            weight_decay: 5e-4,
            lambda: 1.0,
            epochs: 500,
            seed: 0,
            split: [0.6, 0.2, 0.2],
            oracle_gate: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..=MAX_LAMBDA).contains(&self.lambda) {
            return bad(format!(
                "lambda must lie in (0, 64], or be 0 to disable the gate loss; got {}",
                self.lambda
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.layers == 0 || self.hidden == 0 || self.gate_hidden == 0 {
            return bad("layers, hidden and gate_hidden must be >= 1".into());
        }
        if self.oracle_gate && self.model != ModelKind::Gbk {
            return bad("oracle_gate requires the gbk model".into());
        }
        Ok(())
    }

    pub fn specs(&self, in_dim: usize, num_classes: usize) -> Vec<LayerSpec> {
        stack_specs(
            self.model,
            in_dim,
            self.hidden,
            self.layers,
            num_classes,
            self.gate_hidden,
        )
    }
}

/// AdamW moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    m: NamedTensors,
    v: NamedTensors,
    t: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: NamedTensors = params
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.rows(), t.cols())))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.t
    }
}

/// One AdamW update with bias-corrected moments and decoupled decay:
/// `θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ`. Biases are not decayed. Parameters
/// without a gradient are treated as having a zero gradient.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &NamedTensors,
    state: &mut OptimizerState,
    lr: f64,
    wd: f64,
) -> Result<(), TrainError> {
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient(name.clone()));
        }
        let shape = params
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.clone()))?
            .shape();
        if shape != g.shape() {
            return Err(ModelError::ParamShape {
                name: name.clone(),
                expected: shape,
                found: g.shape(),
            }
            .into());
        }
    }
    state.t += 1;
    let c1 = 1.0 - BETA1.powi(state.t as i32);
    let c2 = 1.0 - BETA2.powi(state.t as i32);
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let decay = if is_bias(&name) { 0.0 } else { wd };
        let theta = params.get_mut(&name).expect("listed above");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(theta.rows(), theta.cols()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(theta.rows(), theta.cols()));
        let g = grads.get(&name);
        for k in 0..theta.len() {
            let gk = g.map_or(0.0, |g| g.data()[k]);
            let mk = &mut m.data_mut()[k];
            *mk = BETA1 * *mk + (1.0 - BETA1) * gk;
            let vk = &mut v.data_mut()[k];
            *vk = BETA2 * *vk + (1.0 - BETA2) * gk * gk;
            let m_hat = m.data()[k] / c1;
            let v_hat = v.data()[k] / c2;
            let old = theta.data()[k];
            theta.data_mut()[k] = old - lr * m_hat / (v_hat.sqrt() + ADAM_EPS) - lr * decay * old;
        }
    }
    Ok(())
}

/// Gate supervision in the shape the loss needs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GateSupervision {
    pub edges: Vec<usize>,
    pub targets: Vec<f64>,
}

impl GateSupervision {
    pub fn from_targets(targets: &[GateTarget]) -> Self {
        Self {
            edges: targets.iter().map(|t| t.edge).collect(),
            targets: targets.iter().map(GateTarget::target).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Handles of the recorded loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub task: Var,
    /// Unweighted `Σ_l BCE_l`; absent when the gate term is disabled.
    pub gate: Option<Var>,
}

/// `L_o + λ Σ_l BCE(α_l[supervised], targets)` on the tape. The gate term is
/// skipped entirely when `λ = 0`, there are no targets, or there are no
/// gated layers.
pub fn loss_on_tape<'a>(
    tape: &mut Tape<'a>,
    logits: Var,
    alphas: &[Var],
    labels: &'a [usize],
    train_mask: &'a [usize],
    gate: &'a GateSupervision,
    lambda: f64,
) -> Result<LossVars, TrainError> {
    let task = tape.softmax_cross_entropy(logits, labels, train_mask)?;
    if lambda == 0.0 || gate.is_empty() || alphas.is_empty() {
        return Ok(LossVars {
            total: task,
            task,
            gate: None,
        });
    }
    let mut sum: Option<Var> = None;
    for &alpha in alphas {
        let picked = tape.gather_rows(alpha, gate.edges.as_slice())?;
        let bce = tape.binary_cross_entropy(picked, gate.targets.clone())?;
        sum = Some(match sum {
            Some(s) => tape.add(s, bce)?,
            None => bce,
        });
    }
    let gate_sum = sum.expect("at least one gated layer");
    let weighted = tape.scale(gate_sum, lambda);
    let total = tape.add(task, weighted)?;
    Ok(LossVars {
        total,
        task,
        gate: Some(gate_sum),
    })
}

/// Scalar value of the training objective for given logits and gate values.
pub fn total_loss(
    logits: &Tensor,
    labels: &[usize],
    train_mask: &[usize],
    alphas: &[Tensor],
    targets: &[GateTarget],
    lambda: f64,
) -> Result<f64, TrainError> {
    let gate = GateSupervision::from_targets(targets);
    let mut tape = Tape::new();
    let l = tape.constant_ref(logits);
    let a: Vec<Var> = alphas.iter().map(|t| tape.constant_ref(t)).collect();
    let loss = loss_on_tape(&mut tape, l, &a, labels, train_mask, &gate, lambda)?;
    Ok(tape.value(loss.total).item())
}

/// Micro accuracy of row-wise argmax over `mask`; ties go to the lowest
/// class index.
pub fn accuracy(logits: &Tensor, labels: &[usize], mask: &[usize]) -> Result<f64, TrainError> {
    if mask.is_empty() {
        return Err(TrainError::EmptyMask);
    }
    let pred = logits.gather_rows(mask).argmax_rows();
    let hits = mask
        .iter()
        .zip(&pred)
        .filter(|&(&i, &p)| labels[i] == p)
        .count();
    Ok(hits as f64 / mask.len() as f64)
}

/// Mean softmax cross-entropy over `mask`.
pub fn masked_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    mask: &[usize],
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let l = tape.constant_ref(logits);
    let loss = tape.softmax_cross_entropy(l, labels, mask)?;
    Ok(tape.value(loss).item())
}

/// Oracle gate columns `𝟙(y_src = y_dst)`, one per gated layer.
pub fn oracle_gates(graph: &Graph, specs: &[LayerSpec]) -> Vec<Tensor> {
    let labels = graph.labels();
    let col = Tensor::column(
        graph
            .edges()
            .map(|(s, d)| if labels[s] == labels[d] { 1.0 } else { 0.0 })
            .collect(),
    );
    specs
        .iter()
        .filter(|s| s.kind == LayerKind::Gbk)
        .map(|_| col.clone())
        .collect()
}

/// Accuracy of a model over `mask` with learned gates.
pub fn evaluate(
    specs: &[LayerSpec],
    params: &ModelParams,
    graph: &Graph,
    mask: &[usize],
) -> Result<f64, TrainError> {
    if mask.is_empty() {
        return Err(TrainError::EmptyMask);
    }
    let out = predict(specs, params, graph, Gates::Learned)?;
    accuracy(&out.logits, graph.labels(), mask)
}

/// Forward pass over the whole graph, building `D⁻¹(A+I)` when needed.
pub fn predict(
    specs: &[LayerSpec],
    params: &ModelParams,
    graph: &Graph,
    gates: Gates<'_>,
) -> Result<ModelOutput, TrainError> {
    let adjacency = needs_adjacency(specs).then(|| graph.normalized_adjacency());
    let inputs = GraphInputs::new(graph, adjacency.as_ref());
    Ok(model_forward(specs, params, &inputs, gates)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub task_loss: f64,
    /// Unweighted sum of per-layer gate losses.
    pub gate_loss: Option<f64>,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Gate accuracy on validation-validation edges.
    pub gate_acc: Option<f64>,
    /// Complexity of the final hidden representations of training nodes.
    #[serde(
        serialize_with = "serialize_extended_opt",
        deserialize_with = "deserialize_extended_opt"
    )]
    pub complexity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Test accuracy of the best-validation checkpoint.
    pub test_acc: f64,
    /// Gate accuracy of the best-validation checkpoint on test-test edges.
    pub gate_acc: Option<f64>,
    pub final_val_acc: f64,
    pub final_test_acc: f64,
    pub final_gate_acc: Option<f64>,
}

/// Outcome of [`train_model`].
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub specs: Vec<LayerSpec>,
    /// Checkpoint with the highest validation accuracy (earliest on ties).
    pub best: ModelParams,
    /// Parameters after the last update.
    pub last: ModelParams,
    pub history: RunHistory,
}

/// Metrics document of one run: config echo followed by the history.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsDocument<'a> {
    pub config: &'a TrainConfig,
    pub masks: MaskSizes,
    pub history: &'a RunHistory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl MaskSizes {
    pub fn of(m: &SplitMasks) -> Self {
        Self {
            train: m.train.len(),
            val: m.val.len(),
            test: m.test.len(),
        }
    }
}

pub fn metrics_json(config: &TrainConfig, masks: &SplitMasks, history: &RunHistory) -> String {
    serde_json::to_string_pretty(&MetricsDocument {
        config,
        masks: MaskSizes::of(masks),
        history,
    })
    .expect("metrics serialize")
}

/// Splits with `config.seed`, then trains.
pub fn train_with_splits(
    graph: &Graph,
    config: &TrainConfig,
) -> Result<(TrainedModel, SplitMasks), TrainError> {
    let masks = make_splits(graph, config.split, config.seed)?;
    let trained = train_model(graph, config, &masks)?;
    Ok((trained, masks))
}

/// Full-batch training for `config.epochs` steps.
///
/// Each epoch records the metrics of the parameters before that epoch's
/// update; the best-validation checkpoint is chosen among those. The
/// returned history also carries test metrics of the final parameters.
pub fn train_model(
    graph: &Graph,
    config: &TrainConfig,
    masks: &SplitMasks,
) -> Result<TrainedModel, TrainError> {
    Trainer::new(graph, config, masks)?.run()
}

/// Stepwise full-batch trainer.
pub struct Trainer<'g> {
    graph: &'g Graph,
    config: TrainConfig,
    masks: &'g SplitMasks,
    specs: Vec<LayerSpec>,
    params: ModelParams,
    state: OptimizerState,
    adjacency: Option<Tensor>,
    fixed_gates: Option<Vec<Tensor>>,
    supervision: GateSupervision,
    val_edges: Vec<GateTarget>,
    test_edges: Vec<GateTarget>,
    train_labels: Vec<usize>,
    epoch: usize,
}

impl<'g> Trainer<'g> {
    /// Validates the config and initializes parameters from `config.seed`.
    pub fn new(
        graph: &'g Graph,
        config: &TrainConfig,
        masks: &'g SplitMasks,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if masks.train.is_empty() || masks.val.is_empty() || masks.test.is_empty() {
            return Err(TrainError::EmptyMask);
        }
        let specs = config.specs(graph.feature_dim(), graph.num_classes());
        validate_specs(&specs, graph.feature_dim())?;
        let params = ModelParams::init(&specs, config.seed);
        let supervision = if config.oracle_gate {
            GateSupervision::default()
        } else {
            GateSupervision::from_targets(&gate_targets(graph, masks))
        };
        Ok(Self {
            graph,
            masks,
            state: OptimizerState::new(&params),
            adjacency: needs_adjacency(&specs).then(|| graph.normalized_adjacency()),
            fixed_gates: config.oracle_gate.then(|| oracle_gates(graph, &specs)),
            supervision,
            val_edges: edge_targets_within(graph, &masks.val),
            test_edges: edge_targets_within(graph, &masks.test),
            train_labels: masks.train.iter().map(|&i| graph.labels()[i]).collect(),
            config: config.clone(),
            specs,
            params,
            epoch: 0,
        })
    }

    /// Replaces the initial parameters. Only valid before the first step.
    pub fn with_params(mut self, params: ModelParams) -> Result<Self, TrainError> {
        if self.epoch > 0 {
            return Err(TrainError::Config("parameters replaced after training began".into()));
        }
        params.check(&self.specs)?;
        self.state = OptimizerState::new(&params);
        self.params = params;
        Ok(self)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn gates(&self) -> Gates<'_> {
        match &self.fixed_gates {
            Some(f) => Gates::Fixed(f),
            None => Gates::Learned,
        }
    }

    /// Forward pass with the current parameters.
    pub fn forward(&self) -> Result<ModelOutput, TrainError> {
        let inputs = GraphInputs::new(self.graph, self.adjacency.as_ref());
        Ok(model_forward(&self.specs, &self.params, &inputs, self.gates())?)
    }

    /// Records the metrics of the current parameters, then applies one
    /// AdamW update. A non-finite loss leaves the parameters untouched and
    /// returns [`TrainError::Diverged`] with an empty history.
    pub fn step(&mut self) -> Result<EpochRecord, TrainError> {
        let epoch = self.epoch + 1;
        let labels = self.graph.labels();
        let inputs = GraphInputs::new(self.graph, self.adjacency.as_ref());
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, self.params.tensors());
        let Forward {
            logits,
            alphas,
            penultimate,
        } = forward_on_tape(&mut tape, &self.specs, &vars, &inputs, self.gates())?;
        let loss = loss_on_tape(
            &mut tape,
            logits,
            &alphas,
            labels,
            &self.masks.train,
            &self.supervision,
            self.config.lambda,
        )?;

        let total = tape.value(loss.total).item();
        if !total.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                last_finite: Box::new(self.params.clone()),
                history: Box::new(summarize(Vec::new(), None, 0.0, 0.0)),
            });
        }

        let logit_values = tape.value(logits);
        let alpha_values: Vec<Tensor> = alphas.iter().map(|&a| tape.value(a).clone()).collect();
        let reps = tape.value(penultimate).gather_rows(&self.masks.train);
        let record = EpochRecord {
            epoch,
            train_loss: total,
            task_loss: tape.value(loss.task).item(),
            gate_loss: loss.gate.map(|g| tape.value(g).item()),
            val_loss: masked_cross_entropy(logit_values, labels, &self.masks.val)?,
            train_acc: accuracy(logit_values, labels, &self.masks.train)?,
            val_acc: accuracy(logit_values, labels, &self.masks.val)?,
            gate_acc: if self.fixed_gates.is_some() {
                None
            } else {
                gate_accuracy(&alpha_values, &self.val_edges).ok()
            },
            complexity: consistency_complexity(&reps, &self.train_labels, 2.0)
                .ok()
                .map(|r| r.complexity),
        };

        let grads = tape.backward(loss.total)?;
        let named: NamedTensors = vars
            .iter()
            .filter_map(|(name, &v)| grads.get(v).map(|g| (name.clone(), g.clone())))
            .collect();
        drop(tape);
        adamw_step(
            &mut self.params,
            &named,
            &mut self.state,
            self.config.learning_rate,
            self.config.weight_decay,
        )?;
        self.epoch = epoch;
        Ok(record)
    }

    /// Runs the remaining epochs and assembles the history.
    pub fn run(mut self) -> Result<TrainedModel, TrainError> {
        let mut records = Vec::with_capacity(self.config.epochs);
        let mut best: Option<(usize, f64, ModelParams)> = None;
        while self.epoch < self.config.epochs {
            let before = self.params.clone();
            let record = match self.step() {
                Ok(r) => r,
                Err(TrainError::Diverged {
                    epoch, last_finite, ..
                }) => {
                    let best_summary = best.as_ref().map(|b| (b.0, b.1));
                    return Err(TrainError::Diverged {
                        epoch,
                        last_finite,
                        history: Box::new(summarize(records, best_summary, 0.0, 0.0)),
                    });
                }
                Err(e) => return Err(e),
            };
            if best.as_ref().is_none_or(|b| record.val_acc > b.1) {
                best = Some((record.epoch, record.val_acc, before));
            }
            records.push(record);
        }

        let (best_epoch, best_val_acc, best_params) = best.expect("epochs >= 1");
        let labels = self.graph.labels();
        let inputs = GraphInputs::new(self.graph, self.adjacency.as_ref());
        let best_out = model_forward(&self.specs, &best_params, &inputs, self.gates())?;
        let last_out = self.forward()?;
        let gate_acc_of = |out: &ModelOutput| {
            if self.fixed_gates.is_some() {
                None
            } else {
                gate_accuracy(&out.alphas, &self.test_edges).ok()
            }
        };
        let mut history = summarize(
            records,
            Some((best_epoch, best_val_acc)),
            accuracy(&best_out.logits, labels, &self.masks.test)?,
            accuracy(&last_out.logits, labels, &self.masks.test)?,
        );
        history.gate_acc = gate_acc_of(&best_out);
        history.final_gate_acc = gate_acc_of(&last_out);
        history.final_val_acc = accuracy(&last_out.logits, labels, &self.masks.val)?;
        Ok(TrainedModel {
            specs: self.specs,
            best: best_params,
            last: self.params,
            history,
        })
    }
}

fn summarize(
    records: Vec<EpochRecord>,
    best: Option<(usize, f64)>,
    test_acc: f64,
    final_test_acc: f64,
) -> RunHistory {
    let (best_epoch, best_val_acc) = best.unwrap_or((0, 0.0));
    let final_val_acc = records.last().map_or(0.0, |r| r.val_acc);
    RunHistory {
        records,
        best_epoch,
        best_val_acc,
        test_acc,
        gate_acc: None,
        final_val_acc,
        final_test_acc,
        final_gate_acc: None,
    }
}

/// SplitMix64 finalizer of `seed + stream`; independent per-cell seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl GridSpec {
    /// lr ∈ {1e-3, 1e-4, 1e-5}, wd ∈ {1e-2, 1e-3, 1e-4}, and for gated
    /// models λ ∈ {1, 2, 4, …, 64}.
    pub fn standard(model: ModelKind) -> Self {
        Self {
            learning_rates: vec![1e-3, 1e-4, 1e-5],
            weight_decays: vec![1e-2, 1e-3, 1e-4],
            lambdas: if model == ModelKind::Gbk {
                (0..7).map(|e| f64::from(1u32 << e)).collect()
            } else {
                vec![0.0]
            },
        }
    }

    /// Configs in lr-major, then wd, then λ order; cell `i` gets
    /// `derive_seed(base.seed, i)`.
    pub fn cells(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &lr in &self.learning_rates {
            for &wd in &self.weight_decays {
                for &lambda in &self.lambdas {
                    let seed = derive_seed(base.seed, out.len() as u64);
                    out.push(TrainConfig {
                        learning_rate: lr,
                        weight_decay: wd,
                        lambda,
                        seed,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test_acc: f64,
    pub final_test_acc: f64,
    pub gate_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub index: usize,
    pub config: TrainConfig,
    /// `Err` holds the failure message of a cell that did not finish.
    pub outcome: Result<CellSummary, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    /// Cell with the highest validation accuracy (lowest index on ties).
    pub best: Option<usize>,
}

impl GridResult {
    pub fn best_cell(&self) -> Option<&GridCell> {
        self.best.map(|i| &self.cells[i])
    }
}

/// Trains every cell on the same masks and selects by validation accuracy.
/// Failed cells are recorded, not fatal. `jobs > 1` runs cells on scoped
/// threads; results do not depend on `jobs`.
pub fn grid_search(
    graph: &Graph,
    base: &TrainConfig,
    grid: &GridSpec,
    masks: &SplitMasks,
    jobs: usize,
) -> Result<GridResult, TrainError> {
    let configs = grid.cells(base);
    if configs.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let run = |config: &TrainConfig| -> Result<CellSummary, String> {
        let t = train_model(graph, config, masks).map_err(|e| e.to_string())?;
        let h = t.history;
        Ok(CellSummary {
            best_epoch: h.best_epoch,
            best_val_acc: h.best_val_acc,
            test_acc: h.test_acc,
            final_test_acc: h.final_test_acc,
            gate_acc: h.gate_acc,
        })
    };

    let outcomes: Vec<Result<CellSummary, String>> = if jobs <= 1 {
        configs.iter().map(run).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<CellSummary, String>>>> =
            Mutex::new(vec![None; configs.len()]);
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(configs.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(config) = configs.get(i) else { break };
                    let outcome = run(config);
                    slots.lock().expect("no poisoned workers")[i] = Some(outcome);
                });
            }
        });
        slots
            .into_inner()
            .expect("no poisoned workers")
            .into_iter()
            .map(|o| o.expect("every cell ran"))
            .collect()
    };

    let cells: Vec<GridCell> = configs
        .into_iter()
        .zip(outcomes)
        .enumerate()
        .map(|(index, (config, outcome))| GridCell {
            index,
            config,
            outcome,
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for c in &cells {
        if let Ok(s) = &c.outcome {
            if best.is_none_or(|(_, v)| s.best_val_acc > v) {
                best = Some((c.index, s.best_val_acc));
            }
        }
    }
    Ok(GridResult {
        cells,
        best: best.map(|b| b.0),
    })
}
