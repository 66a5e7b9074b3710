//! The encoder-decoder forecasting model: a bidirectional recurrent encoder
//! (vanilla RNN, LSTM or GRU), optional dot-product attention over the
//! encoder outputs, and an autoregressive decoder whose head applies
//! ReLU -> FC -> FC -> sigmoid, so every prediction lies in (0, 1).
//!
//! The decoder runs unidirectionally with doubled-width cells; its state is
//! seeded from the combined encoder final state through a learned
//! projection. Training is mini-batch gradient descent with per-example
//! gradient accumulation, deterministic given the seed.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DatasetSplit, WindowPair};
use crate::losses::{self, loss_on_tape, LossError, LossKind, LossParams};
use crate::rng::Rng;
use crate::tensor::{Adam, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("window has {got} input channels, model expects {expected}")]
    ChannelMismatch { got: usize, expected: usize },
    #[error("teacher forcing ratio {0} > 0 but no targets were supplied")]
    TeacherTargetsMissing(f64),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("checkpoint version {found} unsupported; this build reads versions <= {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Recurrent cell family used by both encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[serde(rename = "rnn")]
    VanillaRnn,
    Lstm,
    Gru,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::VanillaRnn, CellKind::Lstm, CellKind::Gru];

    pub fn name(&self) -> &'static str {
        match self {
            CellKind::VanillaRnn => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.to_ascii_lowercase().as_str() {
            "rnn" | "vanilla" => Some(CellKind::VanillaRnn),
            "lstm" => Some(CellKind::Lstm),
            "gru" => Some(CellKind::Gru),
            _ => None,
        }
    }

    fn gate_names(&self) -> &'static [&'static str] {
        match self {
            CellKind::VanillaRnn => &["h"],
            CellKind::Gru => &["z", "r", "c"],
            CellKind::Lstm => &["i", "f", "g", "o"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub use_attention: bool,
    pub hidden_size: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub dropout_rate: f64,
    pub teacher_forcing_ratio: f64,
    pub input_channels: usize,
    pub output_length: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            cell: CellKind::Gru,
            use_attention: true,
            hidden_size: 128,
            encoder_layers: 1,
            decoder_layers: 1,
            dropout_rate: 0.0,
            teacher_forcing_ratio: 0.0,
            input_channels: 1,
            output_length: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.hidden_size == 0 {
            return fail("hidden_size must be >= 1".into());
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return fail("layer counts must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing_ratio) {
            return fail(format!(
                "teacher_forcing_ratio {} outside [0, 1]",
                self.teacher_forcing_ratio
            ));
        }
        if self.input_channels == 0 {
            return fail("input_channels must be >= 1".into());
        }
        if self.output_length == 0 {
            return fail("output_length must be >= 1".into());
        }
        Ok(())
    }

    fn decoder_width(&self) -> usize {
        2 * self.hidden_size
    }
}

// ---------------------------------------------------------------------------
// Cells

#[derive(Debug)]
struct CellParams {
    kind: CellKind,
    hidden: usize,
    input_weights: Vec<ParamId>,
    state_weights: Vec<ParamId>,
    biases: Vec<ParamId>,
}

impl CellParams {
    fn register(
        store: &mut ParamStore,
        rng: &mut Rng,
        prefix: &str,
        kind: CellKind,
        input_size: usize,
        hidden: usize,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let uniform = |rows: usize, cols: usize, rng: &mut Rng| {
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.range(-bound, bound)).collect();
            Tensor::from_vec(rows, cols, data).expect("sized by construction")
        };
        let mut input_weights = Vec::new();
        let mut state_weights = Vec::new();
        let mut biases = Vec::new();
        for gate in kind.gate_names() {
            input_weights.push(store.insert(
                format!("{prefix}.{gate}.wx"),
                uniform(hidden, input_size, rng),
            ));
            state_weights.push(store.insert(
                format!("{prefix}.{gate}.wh"),
                uniform(hidden, hidden, rng),
            ));
            biases.push(store.insert(format!("{prefix}.{gate}.b"), Tensor::zeros(hidden, 1)));
        }
        CellParams {
            kind,
            hidden,
            input_weights,
            state_weights,
            biases,
        }
    }

    fn bind(&self, tape: &mut Tape, store: &ParamStore) -> CellVars {
        CellVars {
            kind: self.kind,
            hidden: self.hidden,
            input_weights: self.input_weights.iter().map(|&p| tape.param(store, p)).collect(),
            state_weights: self.state_weights.iter().map(|&p| tape.param(store, p)).collect(),
            biases: self.biases.iter().map(|&p| tape.param(store, p)).collect(),
        }
    }
}

struct CellVars {
    kind: CellKind,
    hidden: usize,
    input_weights: Vec<Var>,
    state_weights: Vec<Var>,
    biases: Vec<Var>,
}

#[derive(Clone, Copy)]
struct CellState {
    hidden: Var,
    cell: Option<Var>,
}

impl CellVars {
    fn zero_state(&self, tape: &mut Tape) -> CellState {
        let zeros = vec![0.0; self.hidden];
        CellState {
            hidden: tape.constant_column(&zeros),
            cell: match self.kind {
                CellKind::Lstm => Some(tape.constant_column(&zeros)),
                _ => None,
            },
        }
    }

    fn initial_state(&self, tape: &mut Tape, hidden: Var) -> CellState {
        CellState {
            hidden,
            cell: match self.kind {
                CellKind::Lstm => {
                    let zeros = vec![0.0; self.hidden];
                    Some(tape.constant_column(&zeros))
                }
                _ => None,
            },
        }
    }

    fn gate(&self, tape: &mut Tape, gate: usize, x: Var, h: Var) -> Result<Var, TensorError> {
        let from_input = tape.matmul(self.input_weights[gate], x)?;
        let from_state = tape.matmul(self.state_weights[gate], h)?;
        let summed = tape.add(from_input, from_state)?;
        tape.add(summed, self.biases[gate])
    }

    fn step(&self, tape: &mut Tape, x: Var, state: &CellState) -> Result<CellState, TensorError> {
        let h = state.hidden;
        match self.kind {
            CellKind::VanillaRnn => {
                let pre = self.gate(tape, 0, x, h)?;
                Ok(CellState {
                    hidden: tape.tanh(pre),
                    cell: None,
                })
            }
            CellKind::Gru => {
                let update_pre = self.gate(tape, 0, x, h)?;
                let update = tape.sigmoid(update_pre);
                let reset_pre = self.gate(tape, 1, x, h)?;
                let reset = tape.sigmoid(reset_pre);
                let gated_state = tape.mul(reset, h)?;
                let candidate_pre = self.gate(tape, 2, x, gated_state)?;
                let candidate = tape.tanh(candidate_pre);
                // h' = (1 - z) h + z c, written as h + z (c - h).
                let delta = tape.sub(candidate, h)?;
                let move_by = tape.mul(update, delta)?;
                Ok(CellState {
                    hidden: tape.add(h, move_by)?,
                    cell: None,
                })
            }
            CellKind::Lstm => {
                let cell = state.cell.expect("lstm state carries a cell");
                let input_pre = self.gate(tape, 0, x, h)?;
                let input_gate = tape.sigmoid(input_pre);
                let forget_pre = self.gate(tape, 1, x, h)?;
                let forget_gate = tape.sigmoid(forget_pre);
                let cand_pre = self.gate(tape, 2, x, h)?;
                let candidate = tape.tanh(cand_pre);
                let output_pre = self.gate(tape, 3, x, h)?;
                let output_gate = tape.sigmoid(output_pre);
                let kept = tape.mul(forget_gate, cell)?;
                let written = tape.mul(input_gate, candidate)?;
                let new_cell = tape.add(kept, written)?;
                let squashed = tape.tanh(new_cell);
                Ok(CellState {
                    hidden: tape.mul(output_gate, squashed)?,
                    cell: Some(new_cell),
                })
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Model

#[derive(Debug)]
struct Layout {
    encoder: Vec<(CellParams, CellParams)>,
    decoder: Vec<CellParams>,
    decoder_init: Vec<ParamId>,
    attention_query: Option<ParamId>,
    head_fc1_weight: ParamId,
    head_fc1_bias: ParamId,
    head_fc2_weight: ParamId,
    head_fc2_bias: ParamId,
}

#[derive(Debug)]
pub struct Seq2Seq {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

/// Context threaded through a training forward pass: the target sequence
/// for teacher forcing plus the run's random stream for forcing/dropout
/// draws.
pub struct TrainContext<'a> {
    pub targets: Option<&'a [f64]>,
    pub rng: &'a mut Rng,
}

/// Per-step encoder output vectors (each 2*hidden wide) and the combined
/// final state.
pub type EncodedSequence = (Vec<Vec<f64>>, Vec<f64>);

/// A prediction plus, when attention is enabled, one weight vector over the
/// input steps per decoded step.
pub type AttentivePrediction = (Vec<f64>, Option<Vec<Vec<f64>>>);

impl Seq2Seq {
    /// Builds a fresh model; weights are uniform in +-1/sqrt(hidden) of the
    /// owning cell, biases zero, drawn in a fixed order from `rng`.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let h = config.hidden_size;
        let width = config.decoder_width();

        let mut encoder = Vec::new();
        for layer in 0..config.encoder_layers {
            let input_size = if layer == 0 { config.input_channels } else { width };
            let fwd = CellParams::register(
                &mut params,
                rng,
                &format!("enc.{layer}.fwd"),
                config.cell,
                input_size,
                h,
            );
            let bwd = CellParams::register(
                &mut params,
                rng,
                &format!("enc.{layer}.bwd"),
                config.cell,
                input_size,
                h,
            );
            encoder.push((fwd, bwd));
        }

        let mut decoder = Vec::new();
        let mut decoder_init = Vec::new();
        let bound = 1.0 / (h as f64).sqrt();
        for layer in 0..config.decoder_layers {
            let input_size = if layer == 0 {
                1 + if config.use_attention { width } else { 0 }
            } else {
                width
            };
            decoder.push(CellParams::register(
                &mut params,
                rng,
                &format!("dec.{layer}.cell"),
                config.cell,
                input_size,
                width,
            ));
            let data: Vec<f64> = (0..width * h).map(|_| rng.range(-bound, bound)).collect();
            decoder_init.push(params.insert(
                format!("dec.{layer}.init.w"),
                Tensor::from_vec(width, h, data).expect("sized"),
            ));
        }

        let attention_query = if config.use_attention {
            let data: Vec<f64> = (0..width * width).map(|_| rng.range(-bound, bound)).collect();
            Some(params.insert(
                "attn.query.w",
                Tensor::from_vec(width, width, data).expect("sized"),
            ))
        } else {
            None
        };

        let fc1: Vec<f64> = (0..h * width).map(|_| rng.range(-bound, bound)).collect();
        let head_fc1_weight =
            params.insert("head.fc1.w", Tensor::from_vec(h, width, fc1).expect("sized"));
        let head_fc1_bias = params.insert("head.fc1.b", Tensor::zeros(h, 1));
        let fc2: Vec<f64> = (0..h).map(|_| rng.range(-bound, bound)).collect();
        let head_fc2_weight =
            params.insert("head.fc2.w", Tensor::from_vec(1, h, fc2).expect("sized"));
        let head_fc2_bias = params.insert("head.fc2.b", Tensor::zeros(1, 1));

        Ok(Seq2Seq {
            config,
            params,
            layout: Layout {
                encoder,
                decoder,
                decoder_init,
                attention_query,
                head_fc1_weight,
                head_fc1_bias,
                head_fc2_weight,
                head_fc2_bias,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_input(&self, input: &Tensor) -> Result<(), ModelError> {
        if input.rows() != self.config.input_channels {
            return Err(ModelError::ChannelMismatch {
                got: input.rows(),
                expected: self.config.input_channels,
            });
        }
        Ok(())
    }

    /// Runs the bidirectional encoder over an input matrix of shape
    /// (channels x steps). Per-step columns of shape (channels x 1) feed a
    /// forward and a backward pass; their states are concatenated per step
    /// and the two final states are summed into the (hidden x 1) carry.
    fn encode_on_tape(
        &self,
        tape: &mut Tape,
        input: &Tensor,
        dropout: Option<(&mut Rng, f64)>,
    ) -> Result<(Vec<Var>, Var), ModelError> {
        let steps = input.cols();
        let channels = input.rows();
        let mut columns = Vec::with_capacity(steps);
        for t in 0..steps {
            let col: Vec<f64> = (0..channels).map(|c| input.data()[c * steps + t]).collect();
            columns.push(tape.constant_column(&col));
        }

        let mut final_state = None;
        let mut layer_inputs = columns;
        for (fwd_params, bwd_params) in &self.layout.encoder {
            let fwd = fwd_params.bind(tape, &self.params);
            let bwd = bwd_params.bind(tape, &self.params);

            let mut state = fwd.zero_state(tape);
            let mut forward_states = Vec::with_capacity(steps);
            for &x in &layer_inputs {
                state = fwd.step(tape, x, &state)?;
                forward_states.push(state.hidden);
            }
            let forward_final = state.hidden;

            let mut state = bwd.zero_state(tape);
            let mut backward_states = vec![None; steps];
            for t in (0..steps).rev() {
                state = bwd.step(tape, layer_inputs[t], &state)?;
                backward_states[t] = Some(state.hidden);
            }
            let backward_final = state.hidden;

            let mut outputs = Vec::with_capacity(steps);
            for t in 0..steps {
                let joined =
                    tape.concat_rows(forward_states[t], backward_states[t].expect("filled"))?;
                outputs.push(joined);
            }
            final_state = Some(tape.add(forward_final, backward_final)?);
            layer_inputs = outputs;
        }

        let mut outputs = layer_inputs;
        if let Some((rng, rate)) = dropout {
            if rate > 0.0 {
                let keep = 1.0 - rate;
                for out in outputs.iter_mut() {
                    let width = tape.shape(*out)[0];
                    let mask: Vec<f64> = (0..width)
                        .map(|_| if rng.next_f64() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let mask = tape.constant_column(&mask);
                    *out = tape.mul(*out, mask)?;
                }
            }
        }
        Ok((outputs, final_state.expect("at least one encoder layer")))
    }

    /// Encoder outputs and combined final state as plain numbers; one inner
    /// vector of length 2*hidden per time step.
    pub fn encode(&self, input: &Tensor) -> Result<EncodedSequence, ModelError> {
        self.check_input(input)?;
        let mut tape = Tape::new();
        let (outputs, final_state) = self.encode_on_tape(&mut tape, input, None)?;
        let outputs = outputs.iter().map(|&v| tape.value(v).to_vec()).collect();
        let final_state = tape.value(final_state).to_vec();
        Ok((outputs, final_state))
    }

    /// One attention read: scores are dot products between the projected
    /// decoder state and each encoder output, softmax-normalized.
    fn attention_on_tape(
        &self,
        tape: &mut Tape,
        query_weight: Var,
        state: Var,
        encoder_matrix: Var,
    ) -> Result<(Var, Var), ModelError> {
        let query = tape.matmul(query_weight, state)?;
        let query_row = tape.transpose(query);
        let scores = tape.matmul(query_row, encoder_matrix)?;
        let weights = tape.softmax_rows(scores);
        let weights_col = tape.transpose(weights);
        let context = tape.matmul(encoder_matrix, weights_col)?;
        Ok((weights, context))
    }

    /// Full forward pass. Returns the (output_length x 1) prediction node
    /// and, when attention is enabled, the per-step attention weights.
    #[allow(clippy::type_complexity)]
    fn forward_on_tape(
        &self,
        tape: &mut Tape,
        input: &Tensor,
        last_close: f64,
        mut train: Option<&mut TrainContext<'_>>,
    ) -> Result<(Var, Option<Vec<Vec<f64>>>), ModelError> {
        self.check_input(input)?;
        let teacher_ratio = if train.is_some() {
            self.config.teacher_forcing_ratio
        } else {
            0.0
        };
        if teacher_ratio > 0.0 {
            let has_targets = train
                .as_ref()
                .map(|ctx| ctx.targets.is_some())
                .unwrap_or(false);
            if !has_targets {
                return Err(ModelError::TeacherTargetsMissing(teacher_ratio));
            }
        }

        let dropout = self.config.dropout_rate;
        let (encoder_outputs, final_state) = {
            let dropout_ctx = match &mut train {
                Some(ctx) if dropout > 0.0 => Some((&mut *ctx.rng, dropout)),
                _ => None,
            };
            self.encode_on_tape(tape, input, dropout_ctx)?
        };
        let encoder_matrix = tape.stack_cols(&encoder_outputs)?;

        let decoder_cells: Vec<CellVars> = self
            .layout
            .decoder
            .iter()
            .map(|cell| cell.bind(tape, &self.params))
            .collect();
        let query_weight = self
            .layout
            .attention_query
            .map(|id| tape.param(&self.params, id));
        let fc1_w = tape.param(&self.params, self.layout.head_fc1_weight);
        let fc1_b = tape.param(&self.params, self.layout.head_fc1_bias);
        let fc2_w = tape.param(&self.params, self.layout.head_fc2_weight);
        let fc2_b = tape.param(&self.params, self.layout.head_fc2_bias);

        let mut states = Vec::with_capacity(decoder_cells.len());
        for (cell, &init) in decoder_cells.iter().zip(&self.layout.decoder_init) {
            let init_weight = tape.param(&self.params, init);
            let seeded = tape.matmul(init_weight, final_state)?;
            states.push(cell.initial_state(tape, seeded));
        }

        let mut attention_log = self.config.use_attention.then(Vec::new);
        let mut previous = tape.constant_scalar(last_close);
        let mut outputs = Vec::with_capacity(self.config.output_length);

        for step in 0..self.config.output_length {
            if step > 0 {
                if let Some(ctx) = train.as_mut() {
                    if teacher_ratio > 0.0 && ctx.rng.next_f64() < teacher_ratio {
                        let targets = ctx.targets.expect("checked above");
                        previous = tape.constant_scalar(targets[step - 1]);
                    }
                }
            }

            let mut step_input = previous;
            if let Some(query_weight) = query_weight {
                let (weights, context) = self.attention_on_tape(
                    tape,
                    query_weight,
                    states.last().expect("decoder has layers").hidden,
                    encoder_matrix,
                )?;
                if let Some(log) = attention_log.as_mut() {
                    log.push(tape.value(weights).to_vec());
                }
                step_input = tape.concat_rows(previous, context)?;
            }

            let mut carry = step_input;
            for (layer, cell) in decoder_cells.iter().enumerate() {
                states[layer] = cell.step(tape, carry, &states[layer])?;
                carry = states[layer].hidden;
            }

            let mut pre_head = tape.relu(carry);
            if dropout > 0.0 {
                if let Some(ctx) = train.as_mut() {
                    let keep = 1.0 - dropout;
                    let width = tape.shape(pre_head)[0];
                    let mask: Vec<f64> = (0..width)
                        .map(|_| if ctx.rng.next_f64() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let mask = tape.constant_column(&mask);
                    pre_head = tape.mul(pre_head, mask)?;
                }
            }
            let fc1 = tape.matmul(fc1_w, pre_head)?;
            let fc1 = tape.add(fc1, fc1_b)?;
            let fc2 = tape.matmul(fc2_w, fc1)?;
            let fc2 = tape.add(fc2, fc2_b)?;
            let y = tape.sigmoid(fc2);
            outputs.push(y);
            previous = y;
        }

        let row = tape.stack_cols(&outputs)?;
        let prediction = tape.transpose(row);
        Ok((prediction, attention_log))
    }

    /// Predicts without touching gradients or the random stream.
    pub fn predict(&self, input: &Tensor, last_close: f64) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let (prediction, _) = self.forward_on_tape(&mut tape, input, last_close, None)?;
        Ok(tape.value(prediction).to_vec())
    }

    /// Predicts and also returns the attention weights (one vector over the
    /// input steps per decoded step) when attention is enabled.
    pub fn predict_with_attention(
        &self,
        input: &Tensor,
        last_close: f64,
    ) -> Result<AttentivePrediction, ModelError> {
        let mut tape = Tape::new();
        let (prediction, attention) = self.forward_on_tape(&mut tape, input, last_close, None)?;
        Ok((tape.value(prediction).to_vec(), attention))
    }

    /// Forward loss on the current parameters; used by evaluation and the
    /// finite-difference oracle.
    pub fn loss_for(
        &self,
        pair: &WindowPair,
        kind: LossKind,
        loss_params: &LossParams,
    ) -> Result<f64, ModelError> {
        let input = window_input(pair);
        let prediction = self.predict(&input, last_close(pair))?;
        Ok(losses::loss_value(kind, &prediction, &pair.target, loss_params)?)
    }

    /// Forward + backward for one example; gradients accumulate into the
    /// parameter store scaled by `grad_scale`. Returns the loss value.
    pub fn accumulate_gradients(
        &mut self,
        pair: &WindowPair,
        kind: LossKind,
        loss_params: &LossParams,
        grad_scale: f64,
        train: Option<&mut TrainContext<'_>>,
    ) -> Result<f64, ModelError> {
        let input = window_input(pair);
        let mut tape = Tape::new();
        let (prediction, _) =
            self.forward_on_tape(&mut tape, &input, last_close(pair), train)?;
        let loss = loss_on_tape(&mut tape, prediction, &pair.target, kind, loss_params)?;
        let value = tape.value(loss)[0];
        tape.backward_scaled(loss, grad_scale, &mut self.params)?;
        Ok(value)
    }
}

/// Stacks a window's close prices and feature channels into the
/// (channels x steps) model input.
pub fn window_input(pair: &WindowPair) -> Tensor {
    let steps = pair.input.len();
    let channels = 1 + pair.features.len();
    let mut data = Vec::with_capacity(channels * steps);
    data.extend_from_slice(&pair.input);
    for feature in &pair.features {
        data.extend_from_slice(feature);
    }
    Tensor::from_vec(channels, steps, data).expect("feature channels match input length")
}

fn last_close(pair: &WindowPair) -> f64 {
    *pair.input.last().expect("windows are non-empty")
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub loss_params: LossParams,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 150,
            batch_size: 128,
            learning_rate: 1e-4,
            seed: 0,
            loss: LossKind::Mpv,
            loss_params: LossParams::default(),
        }
    }
}

/// One row of the per-epoch metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_pvrmse: f64,
    pub val_pvmae: f64,
    pub val_smape: f64,
}

/// Mean validation metrics over a window set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub rmse: f64,
    pub pvrmse: f64,
    pub pvmae: f64,
    pub smape: f64,
}

/// Averages the evaluation metrics of per-window predictions.
pub fn metrics_over_windows(
    predictions: &[Vec<f64>],
    targets: &[Vec<f64>],
    zigzag_threshold: f64,
) -> Result<ValMetrics, LossError> {
    assert_eq!(predictions.len(), targets.len());
    assert!(!predictions.is_empty());
    let n = predictions.len() as f64;
    let mut sums = (0.0, 0.0, 0.0, 0.0);
    for (pred, target) in predictions.iter().zip(targets) {
        sums.0 += losses::rmse(pred, target)?;
        sums.1 += losses::pvrmse(pred, target, zigzag_threshold)?;
        sums.2 += losses::pvmae(pred, target, zigzag_threshold)?;
        sums.3 += losses::smape(pred, target)?;
    }
    Ok(ValMetrics {
        rmse: sums.0 / n,
        pvrmse: sums.1 / n,
        pvmae: sums.2 / n,
        smape: sums.3 / n,
    })
}

/// Predicts every window with the model.
pub fn predict_windows(model: &Seq2Seq, windows: &[WindowPair]) -> Result<Vec<Vec<f64>>, ModelError> {
    windows
        .iter()
        .map(|pair| model.predict(&window_input(pair), last_close(pair)))
        .collect()
}

/// Trains a fresh model on the split. Deterministic given the seed: the
/// same seed reproduces initialization, batch order, forcing/dropout draws
/// and therefore the final parameters bit for bit.
pub fn train(
    split: &DatasetSplit,
    config: &ModelConfig,
    settings: &TrainSettings,
) -> Result<(Seq2Seq, Vec<EpochLog>), ModelError> {
    config.validate()?;
    settings.loss_params.validate()?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    for pair in split.train.iter().chain(&split.validation) {
        let channels = pair.input_channels();
        if channels != config.input_channels {
            return Err(ModelError::ChannelMismatch {
                got: channels,
                expected: config.input_channels,
            });
        }
    }

    let mut rng = Rng::new(settings.seed);
    let mut model = Seq2Seq::new(config.clone(), &mut rng)?;
    let mut optimizer = Adam::new(settings.learning_rate);
    let mut log = Vec::with_capacity(settings.epochs);
    let threshold = settings.loss_params.zigzag_threshold;

    let mut order: Vec<usize> = (0..split.train.len()).collect();
    for epoch in 0..settings.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(settings.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            for &window_index in batch {
                let pair = &split.train[window_index];
                let mut ctx = TrainContext {
                    targets: Some(&pair.target),
                    rng: &mut rng,
                };
                let value = model.accumulate_gradients(
                    pair,
                    settings.loss,
                    &settings.loss_params,
                    scale,
                    Some(&mut ctx),
                )?;
                if !value.is_finite() {
                    return Err(ModelError::NonFiniteLoss {
                        epoch,
                        batch: batch_index,
                    });
                }
                epoch_loss += value;
            }
            optimizer.step(&mut model.params)?;
        }

        let predictions = predict_windows(&model, &split.validation)?;
        let targets: Vec<Vec<f64>> = split.validation.iter().map(|w| w.target.clone()).collect();
        let metrics = metrics_over_windows(&predictions, &targets, threshold)?;
        log.push(EpochLog {
            epoch,
            train_loss: epoch_loss / split.train.len() as f64,
            val_pvrmse: metrics.pvrmse,
            val_pvmae: metrics.pvmae,
            val_smape: metrics.smape,
        });
    }
    Ok((model, log))
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    pub loss: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub metadata: CheckpointMeta,
    pub parameters: BTreeMap<String, CheckpointTensor>,
}

impl Seq2Seq {
    pub fn to_checkpoint(&self, metadata: CheckpointMeta) -> Checkpoint {
        let parameters = self
            .params
            .iter()
            .map(|(name, tensor)| {
                (
                    name.to_string(),
                    CheckpointTensor {
                        shape: tensor.shape(),
                        data: tensor.data().to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            metadata,
            parameters,
        }
    }

    /// Rebuilds a model from a checkpoint. Every parameter the config
    /// declares must be present exactly once with a matching shape.
    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self, ModelError> {
        if checkpoint.version > CHECKPOINT_VERSION {
            return Err(ModelError::VersionMismatch {
                found: checkpoint.version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let mut rng = Rng::new(0);
        let mut model = Seq2Seq::new(checkpoint.config.clone(), &mut rng)?;
        let expected = model.params.len();
        if checkpoint.parameters.len() != expected {
            return Err(ModelError::CorruptCheckpoint(format!(
                "expected {expected} parameters, found {}",
                checkpoint.parameters.len()
            )));
        }
        for (name, tensor) in model.params.iter_mut() {
            let stored = checkpoint
                .parameters
                .get(name)
                .ok_or_else(|| ModelError::CorruptCheckpoint(format!("missing parameter {name}")))?;
            if stored.shape != tensor.shape() || stored.data.len() != tensor.len() {
                return Err(ModelError::CorruptCheckpoint(format!(
                    "parameter {name}: shape {:?} does not match expected {:?}",
                    stored.shape,
                    tensor.shape()
                )));
            }
            tensor.data_mut().copy_from_slice(&stored.data);
        }
        Ok(model)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<(), ModelError> {
    let text = serde_json::to_string(checkpoint)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ModelError::CorruptCheckpoint("missing version field".into()))?;
    if version as u32 > CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version as u32,
            supported: CHECKPOINT_VERSION,
        });
    }
    let checkpoint: Checkpoint = serde_json::from_value(value)
        .map_err(|e| ModelError::CorruptCheckpoint(e.to_string()))?;
    Ok(checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(cell: CellKind, attention: bool) -> ModelConfig {
        ModelConfig {
            cell,
            use_attention: attention,
            hidden_size: 3,
            input_channels: 1,
            output_length: 4,
            ..ModelConfig::default()
        }
    }

    fn zeroed(mut model: Seq2Seq) -> Seq2Seq {
        for (_, tensor) in model.params.iter_mut() {
            tensor.data_mut().fill(0.0);
        }
        model
    }

    fn ramp_input(steps: usize) -> Tensor {
        let data: Vec<f64> = (0..steps).map(|t| 0.3 + 0.05 * (t as f64)).collect();
        Tensor::from_vec(1, steps, data).unwrap()
    }

    #[test]
    fn zero_parameter_cells_fix_zero_state() {
        for cell in CellKind::ALL {
            let mut rng = Rng::new(0);
            let model = zeroed(Seq2Seq::new(tiny_config(cell, false), &mut rng).unwrap());
            let (outputs, final_state) = model.encode(&ramp_input(5)).unwrap();
            for step in &outputs {
                assert!(step.iter().all(|&v| v == 0.0), "{} leaks state", cell.name());
            }
            assert!(final_state.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn encoder_output_width_is_double_hidden() {
        let mut rng = Rng::new(1);
        let config = ModelConfig {
            hidden_size: 2,
            ..tiny_config(CellKind::Gru, true)
        };
        let model = Seq2Seq::new(config, &mut rng).unwrap();
        let (outputs, final_state) = model.encode(&ramp_input(4)).unwrap();
        assert_eq!(outputs.len(), 4);
        assert!(outputs.iter().all(|o| o.len() == 4));
        assert_eq!(final_state.len(), 2);
    }

    #[test]
    fn reversing_input_swaps_direction_roles() {
        let mut rng = Rng::new(7);
        let mut model = Seq2Seq::new(tiny_config(CellKind::Gru, false), &mut rng).unwrap();
        // Give both directions identical weights so the symmetry is exact.
        let copies: Vec<(String, Vec<f64>)> = model
            .params()
            .iter()
            .filter(|(name, _)| name.starts_with("enc.0.fwd"))
            .map(|(name, tensor)| (name.replace(".fwd", ".bwd"), tensor.data().to_vec()))
            .collect();
        for (name, data) in copies {
            for (param_name, tensor) in model.params_mut().iter_mut() {
                if param_name == name {
                    tensor.data_mut().copy_from_slice(&data);
                }
            }
        }
        let steps = 6;
        let input = ramp_input(steps);
        let reversed = {
            let mut data = input.data().to_vec();
            data.reverse();
            Tensor::from_vec(1, steps, data).unwrap()
        };
        let (fwd_out, _) = model.encode(&input).unwrap();
        let (rev_out, _) = model.encode(&reversed).unwrap();
        let h = 3;
        for (t, step) in fwd_out.iter().enumerate() {
            let mirrored = &rev_out[steps - 1 - t];
            for k in 0..h {
                assert!((step[k] - mirrored[h + k]).abs() < 1e-12);
                assert!((step[h + k] - mirrored[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_parameter_model_outputs_half() {
        for cell in CellKind::ALL {
            for attention in [false, true] {
                let mut rng = Rng::new(0);
                let model = zeroed(Seq2Seq::new(tiny_config(cell, attention), &mut rng).unwrap());
                let prediction = model.predict(&ramp_input(5), 0.55).unwrap();
                assert_eq!(prediction.len(), 4);
                for &y in &prediction {
                    assert_eq!(y, 0.5, "{}/{attention} should output sigmoid(0)", cell.name());
                }
            }
        }
    }

    #[test]
    fn predictions_stay_in_unit_interval() {
        for cell in CellKind::ALL {
            for attention in [false, true] {
                let mut rng = Rng::new(99);
                let model = Seq2Seq::new(tiny_config(cell, attention), &mut rng).unwrap();
                let prediction = model.predict(&ramp_input(8), 0.4).unwrap();
                for &y in &prediction {
                    assert!(y > 0.0 && y < 1.0);
                }
            }
        }
    }

    #[test]
    fn attention_weights_are_a_distribution() {
        for cell in CellKind::ALL {
            let mut rng = Rng::new(3);
            let model = Seq2Seq::new(tiny_config(cell, true), &mut rng).unwrap();
            let (_, attention) = model.predict_with_attention(&ramp_input(8), 0.4).unwrap();
            let attention = attention.expect("attention enabled");
            assert_eq!(attention.len(), 4);
            for weights in attention {
                assert_eq!(weights.len(), 8);
                let sum: f64 = weights.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(weights.iter().all(|&w| w >= 0.0));
            }
        }
    }

    #[test]
    fn uniform_attention_over_identical_encoder_outputs() {
        // With zero encoder weights every encoder output is the zero
        // vector, so attention has nothing to distinguish and the context
        // equals that common vector.
        let mut rng = Rng::new(5);
        let mut model = Seq2Seq::new(tiny_config(CellKind::Gru, true), &mut rng).unwrap();
        for (name, tensor) in model.params_mut().iter_mut() {
            if name.starts_with("enc.") {
                tensor.data_mut().fill(0.0);
            }
        }
        let (_, attention) = model.predict_with_attention(&ramp_input(6), 0.4).unwrap();
        for weights in attention.unwrap() {
            for &w in &weights {
                assert!((w - 1.0 / 6.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn teacher_ratio_zero_ignores_targets() {
        let mut rng = Rng::new(11);
        let model = Seq2Seq::new(tiny_config(CellKind::Lstm, true), &mut rng).unwrap();
        let pair = WindowPair {
            input: (0..8).map(|t| 0.4 + 0.02 * t as f64).collect(),
            target: vec![0.5, 0.6, 0.7, 0.8],
            features: Vec::new(),
            origin_index: 0,
        };
        let input = window_input(&pair);
        // Eval path never reads targets; run the train path with and
        // without targets at ratio zero and compare.
        let mut tape = Tape::new();
        let mut rng_a = Rng::new(1);
        let mut ctx = TrainContext {
            targets: Some(&pair.target),
            rng: &mut rng_a,
        };
        let (with_targets, _) = model
            .forward_on_tape(&mut tape, &input, 0.54, Some(&mut ctx))
            .unwrap();
        let with_targets = tape.value(with_targets).to_vec();

        let mut tape = Tape::new();
        let mut rng_b = Rng::new(2);
        let mut ctx = TrainContext {
            targets: None,
            rng: &mut rng_b,
        };
        let (without_targets, _) = model
            .forward_on_tape(&mut tape, &input, 0.54, Some(&mut ctx))
            .unwrap();
        let without_targets = tape.value(without_targets).to_vec();
        assert_eq!(with_targets, without_targets);
    }

    #[test]
    fn full_teacher_forcing_reads_targets() {
        let mut rng = Rng::new(11);
        let config = ModelConfig {
            teacher_forcing_ratio: 1.0,
            ..tiny_config(CellKind::Gru, false)
        };
        let model = Seq2Seq::new(config, &mut rng).unwrap();
        let input = ramp_input(6);
        let forward_with = |targets: &[f64]| {
            let mut tape = Tape::new();
            let mut stream = Rng::new(1);
            let mut ctx = TrainContext {
                targets: Some(targets),
                rng: &mut stream,
            };
            let (out, _) = model
                .forward_on_tape(&mut tape, &input, 0.5, Some(&mut ctx))
                .unwrap();
            tape.value(out).to_vec()
        };
        let a = forward_with(&[0.2, 0.2, 0.2, 0.2]);
        let b = forward_with(&[0.9, 0.9, 0.9, 0.9]);
        assert_ne!(a, b, "forced decoding must consume the targets");
        // The first step is always fed the last input value, so it is
        // unaffected by the targets.
        assert_eq!(a[0], b[0]);
    }

    #[test]
    fn dropout_is_stochastic_in_training_and_off_at_eval() {
        let mut rng = Rng::new(19);
        let config = ModelConfig {
            dropout_rate: 0.4,
            ..tiny_config(CellKind::Gru, true)
        };
        let model = Seq2Seq::new(config, &mut rng).unwrap();
        let input = ramp_input(6);
        let train_forward = |seed: u64| {
            let mut tape = Tape::new();
            let mut stream = Rng::new(seed);
            let mut ctx = TrainContext {
                targets: None,
                rng: &mut stream,
            };
            let (out, _) = model
                .forward_on_tape(&mut tape, &input, 0.5, Some(&mut ctx))
                .unwrap();
            tape.value(out).to_vec()
        };
        assert_ne!(train_forward(1), train_forward(2), "masks must differ");
        assert_eq!(train_forward(3), train_forward(3), "same stream, same mask");
        // Evaluation ignores dropout entirely.
        let a = model.predict(&input, 0.5).unwrap();
        let b = model.predict(&input, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn teacher_forcing_without_targets_errors() {
        let mut rng = Rng::new(11);
        let config = ModelConfig {
            teacher_forcing_ratio: 0.5,
            ..tiny_config(CellKind::Gru, false)
        };
        let model = Seq2Seq::new(config, &mut rng).unwrap();
        let mut tape = Tape::new();
        let mut stream = Rng::new(0);
        let mut ctx = TrainContext {
            targets: None,
            rng: &mut stream,
        };
        let err = model
            .forward_on_tape(&mut tape, &ramp_input(6), 0.5, Some(&mut ctx))
            .unwrap_err();
        assert!(matches!(err, ModelError::TeacherTargetsMissing(_)));
    }

    #[test]
    fn checkpoint_round_trip_reproduces_predictions() {
        let mut rng = Rng::new(42);
        let model = Seq2Seq::new(tiny_config(CellKind::Gru, true), &mut rng).unwrap();
        let input = ramp_input(8);
        let baseline = model.predict(&input, 0.5).unwrap();

        let checkpoint = model.to_checkpoint(CheckpointMeta {
            epoch: 0,
            seed: 42,
            loss: "mpv".into(),
        });
        let dir = std::env::temp_dir().join("driftcast-model-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.json");
        save_checkpoint(&path, &checkpoint).unwrap();
        let restored = Seq2Seq::from_checkpoint(&load_checkpoint(&path).unwrap()).unwrap();
        let prediction = restored.predict(&input, 0.5).unwrap();
        assert_eq!(baseline, prediction, "round trip must be bit exact");
    }

    #[test]
    fn tampered_checkpoint_shape_is_rejected() {
        let mut rng = Rng::new(42);
        let model = Seq2Seq::new(tiny_config(CellKind::Gru, false), &mut rng).unwrap();
        let mut checkpoint = model.to_checkpoint(CheckpointMeta {
            epoch: 0,
            seed: 42,
            loss: "rmse".into(),
        });
        let key = checkpoint.parameters.keys().next().unwrap().clone();
        checkpoint.parameters.get_mut(&key).unwrap().shape = [999, 1];
        let err = Seq2Seq::from_checkpoint(&checkpoint).unwrap_err();
        assert!(matches!(err, ModelError::CorruptCheckpoint(_)));
    }

    #[test]
    fn future_version_is_rejected() {
        let mut rng = Rng::new(42);
        let model = Seq2Seq::new(tiny_config(CellKind::Gru, false), &mut rng).unwrap();
        let mut checkpoint = model.to_checkpoint(CheckpointMeta {
            epoch: 0,
            seed: 42,
            loss: "rmse".into(),
        });
        checkpoint.version = CHECKPOINT_VERSION + 1;
        let err = Seq2Seq::from_checkpoint(&checkpoint).unwrap_err();
        assert!(matches!(err, ModelError::VersionMismatch { .. }));
    }

    fn toy_split(windows: usize, input_len: usize, output_len: usize) -> DatasetSplit {
        let mut rng = Rng::new(8);
        let make = |rng: &mut Rng, origin: usize| {
            let input: Vec<f64> = (0..input_len)
                .map(|t| 0.5 + 0.3 * ((origin + t) as f64 * 0.4).sin() + 0.01 * rng.normal())
                .collect();
            let target: Vec<f64> = (0..output_len)
                .map(|t| 0.5 + 0.3 * ((origin + input_len + t) as f64 * 0.4).sin())
                .collect();
            WindowPair {
                input,
                target,
                features: Vec::new(),
                origin_index: origin,
            }
        };
        let all: Vec<WindowPair> = (0..windows).map(|i| make(&mut rng, i * output_len)).collect();
        let train_len = windows - 2;
        DatasetSplit {
            train: all[..train_len].to_vec(),
            validation: all[train_len..].to_vec(),
        }
    }

    #[test]
    fn training_is_deterministic_and_logs_epochs() {
        let split = toy_split(8, 12, 4);
        let config = ModelConfig {
            hidden_size: 4,
            input_channels: 1,
            output_length: 4,
            ..ModelConfig::default()
        };
        let settings = TrainSettings {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 1234,
            loss: LossKind::Mpv,
            loss_params: LossParams::default(),
        };
        let (model_a, log_a) = train(&split, &config, &settings).unwrap();
        let (model_b, log_b) = train(&split, &config, &settings).unwrap();
        assert_eq!(log_a.len(), 2);
        assert_eq!(log_a, log_b);
        let meta = CheckpointMeta {
            epoch: 2,
            seed: 1234,
            loss: "mpv".into(),
        };
        let cp_a = serde_json::to_string(&model_a.to_checkpoint(meta.clone())).unwrap();
        let cp_b = serde_json::to_string(&model_b.to_checkpoint(meta)).unwrap();
        assert_eq!(cp_a, cp_b, "identical seeds must give identical checkpoints");
    }

    #[test]
    fn zero_epochs_returns_fresh_model() {
        let split = toy_split(6, 10, 4);
        let config = ModelConfig {
            hidden_size: 3,
            output_length: 4,
            ..ModelConfig::default()
        };
        let settings = TrainSettings {
            epochs: 0,
            seed: 5,
            ..TrainSettings::default()
        };
        let (model, log) = train(&split, &config, &settings).unwrap();
        assert!(log.is_empty());
        let mut rng = Rng::new(5);
        let fresh = Seq2Seq::new(config, &mut rng).unwrap();
        let input = ramp_input(10);
        assert_eq!(
            model.predict(&input, 0.5).unwrap(),
            fresh.predict(&input, 0.5).unwrap()
        );
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let split = DatasetSplit {
            train: Vec::new(),
            validation: Vec::new(),
        };
        let err = train(&split, &ModelConfig::default(), &TrainSettings::default()).unwrap_err();
        assert!(matches!(err, ModelError::EmptyDataset));
    }
}
