//! Wireless channel graph convolution network: layered MAX message passing
//! with one shared parameter set, a normalization `beta` keeping every output
//! feasible by construction, and an unsupervised loss (negative weighted sum
//! rate on full CSI).
//!
//! Per layer, node `i` updates its variable part as
//!
//! ```text
//! m_ji    = MLP1([gamma_j, e_ji])          over in-edges (j, i)
//! agg_i   = MAX_j m_ji                     (zero vector if no in-edges)
//! gamma_i = beta(MLP2([static_i, gamma_i, agg_i]))
//! ```
//!
//! Two forward paths exist: a straight-line one for inference ([`infer`],
//! [`network_forward`]) and a taped one for training; they share the same
//! kernels and are pinned to each other by tests.
//!
//! # Checkpoint format
//!
//! `<path>`: magic `AGCK`, u32 LE version, u32 LE tensor count, then per
//! tensor u32 LE rank + u64 LE dims + f64 LE data. `<path>.json`: sidecar
//! with the architecture (widths, layer count, beta) and feature scales.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::rc::Rc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Allocation, WirelessGraph};
use crate::nngrad::{
    adam_step, init_glorot, mlp_forward, mlp_forward_taped, AdamConfig, AdamState, MlpNodeIds,
    MlpParams, NodeId, Tape, Tensor,
};
use crate::scenario::ChannelRealization;
use crate::{Error, Result};

/// Output normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Beta {
    /// Power control (`Nt = 1`): the variable is one power fraction in
    /// (0, 1), squashed by a sigmoid.
    Sigmoid,
    /// Beamforming: the variable is the re/im beamformer direction,
    /// projected onto the unit l2 ball.
    L2BallProjection,
}

/// Initial variable part `gamma^(0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gamma0 {
    /// Sigmoid mode: half power (0.5). Projection mode: maximum-ratio
    /// direction `h_kk / ‖h_kk‖`.
    Default,
    /// Sigmoid mode: full power (1.0), for shared-initialization comparisons
    /// against solvers started at full power. Projection mode: same as
    /// `Default` (the MRT direction already has unit norm).
    FullPower,
}

/// Message aggregation. MAX is the architecture; SUM is an ablation hatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregator {
    Max,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WcgcnConfig {
    pub num_tx_antennas: usize,
    /// Hidden/output widths of MLP1 after the input layer.
    pub hidden1: Vec<usize>,
    /// Hidden widths of MLP2 (its output width is the variable width).
    pub hidden2: Vec<usize>,
    /// Shared-weight message-passing rounds.
    pub num_layers: usize,
    pub beta: Beta,
    pub gamma0: Gamma0,
    pub aggregator: Aggregator,
}

impl Default for WcgcnConfig {
    fn default() -> Self {
        Self {
            num_tx_antennas: 1,
            hidden1: vec![32, 32],
            hidden2: vec![16],
            num_layers: 3,
            beta: Beta::Sigmoid,
            gamma0: Gamma0::Default,
            aggregator: Aggregator::Max,
        }
    }
}

impl WcgcnConfig {
    /// Beamforming defaults for `Nt` transmit antennas.
    pub fn beamforming(nt: usize) -> Self {
        Self {
            num_tx_antennas: nt,
            hidden1: vec![64, 64],
            hidden2: vec![32],
            beta: Beta::L2BallProjection,
            ..Self::default()
        }
    }

    /// Width of the per-node variable part.
    pub fn gamma_dim(&self) -> usize {
        match self.beta {
            Beta::Sigmoid => 1,
            Beta::L2BallProjection => 2 * self.num_tx_antennas,
        }
    }

    /// `{in, hidden...}` widths of MLP1: input is `[gamma_j, e_ji]`.
    pub fn mlp1_widths(&self) -> Vec<usize> {
        let mut w = vec![self.gamma_dim() + 4 * self.num_tx_antennas];
        w.extend(&self.hidden1);
        w
    }

    /// `{in, hidden..., out}` widths of MLP2: input is
    /// `[static_i, gamma_i, agg_i]`, output is the variable width.
    pub fn mlp2_widths(&self) -> Vec<usize> {
        let nt = self.num_tx_antennas;
        let mut w = vec![(2 * nt + 2) + self.gamma_dim() + *self.hidden1.last().unwrap()];
        w.extend(&self.hidden2);
        w.push(self.gamma_dim());
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tx_antennas < 1 {
            return Err(Error::InvalidConfig("num_tx_antennas must be >= 1".into()));
        }
        if self.num_layers < 1 {
            return Err(Error::InvalidConfig("num_layers must be >= 1".into()));
        }
        if self.hidden1.is_empty() || self.hidden2.is_empty() {
            return Err(Error::InvalidConfig("hidden width lists must be nonempty".into()));
        }
        if self.beta == Beta::Sigmoid && self.num_tx_antennas != 1 {
            return Err(Error::InvalidConfig(
                "sigmoid normalization is the scalar power-control mode; use l2-ball-projection for Nt > 1".into(),
            ));
        }
        Ok(())
    }
}

/// The trainable parameter set: two MLPs shared across all layers, plus the
/// input feature scales resolved at training time (stored so checkpoints
/// reproduce inference bit-for-bit).
#[derive(Clone, Debug, PartialEq)]
pub struct WcgcnParams {
    pub cfg: WcgcnConfig,
    pub mlp1: MlpParams,
    pub mlp2: MlpParams,
    /// Multiplier applied to the channel entries of node features.
    pub node_scale: f64,
    /// Multiplier applied to edge features.
    pub edge_scale: f64,
}

impl WcgcnParams {
    pub fn new(cfg: WcgcnConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mlp1 = init_glorot(&cfg.mlp1_widths(), rng);
        let mlp2 = init_glorot(&cfg.mlp2_widths(), rng);
        Ok(Self { cfg, mlp1, mlp2, node_scale: 1.0, edge_scale: 1.0 })
    }

    /// All parameter tensors, MLP1 first; the order used by the optimizer
    /// and the checkpoint format.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.mlp1.tensors();
        t.extend(self.mlp2.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t: Vec<&mut Tensor> = Vec::new();
        t.extend(self.mlp1.tensors_mut());
        t.extend(self.mlp2.tensors_mut());
        t
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Per-instance constants shared by the raw and taped forward paths.
struct PreparedGraph {
    k: usize,
    /// `[K, 2Nt+2]`, channel block multiplied by `node_scale`.
    static_feats: Tensor,
    /// `[E, 4Nt]`, multiplied by `edge_scale`.
    edge_feats: Tensor,
    srcs: Rc<[usize]>,
    dsts: Vec<usize>,
    /// `[K, gamma_dim]`
    gamma0: Tensor,
    pmax: f64,
}

impl PreparedGraph {
    fn new(params: &WcgcnParams, g: &WirelessGraph) -> Result<Self> {
        let cfg = &params.cfg;
        let nt = cfg.num_tx_antennas;
        if g.num_tx_antennas() != nt {
            return Err(Error::Shape(format!(
                "graph has Nt={}, model expects Nt={nt}",
                g.num_tx_antennas()
            )));
        }
        let k = g.num_nodes();
        let mut static_feats = g.node_features().clone();
        for r in 0..k {
            let row = static_feats.row_mut(r);
            for v in &mut row[..2 * nt] {
                *v *= params.node_scale;
            }
        }
        let mut edge_feats = g.edge_features().clone();
        edge_feats.scale_assign(params.edge_scale);
        let srcs: Vec<usize> = g.edges().iter().map(|&(j, _)| j).collect();
        let dsts: Vec<usize> = g.edges().iter().map(|&(_, i)| i).collect();
        let gamma0 = initial_gamma(cfg, g);
        Ok(Self {
            k,
            static_feats,
            edge_feats,
            srcs: Rc::from(srcs),
            dsts,
            gamma0,
            pmax: g.pmax(),
        })
    }
}

fn initial_gamma(cfg: &WcgcnConfig, g: &WirelessGraph) -> Tensor {
    let k = g.num_nodes();
    let nt = cfg.num_tx_antennas;
    match cfg.beta {
        Beta::Sigmoid => {
            let v = match cfg.gamma0 {
                Gamma0::Default => 0.5,
                Gamma0::FullPower => 1.0,
            };
            Tensor::new(&[k, 1], vec![v; k])
        }
        Beta::L2BallProjection => {
            // Maximum-ratio direction from the (unscaled) direct channel.
            let mut data = Vec::with_capacity(k * 2 * nt);
            for r in 0..k {
                let row = g.node_features().row(r);
                let h = &row[..2 * nt];
                let norm: f64 = h.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    data.extend(h.iter().map(|x| x / norm));
                } else {
                    data.extend(std::iter::repeat(0.0).take(2 * nt));
                }
            }
            Tensor::new(&[k, 2 * nt], data)
        }
    }
}

fn aggregate_raw(cfg: &WcgcnConfig, messages: &Tensor, dsts: &[usize], k: usize) -> Tensor {
    match cfg.aggregator {
        Aggregator::Max => crate::nngrad::segment_max_kernel(messages, dsts, k).0,
        Aggregator::Sum => crate::nngrad::segment_sum_kernel(messages, dsts, k),
    }
}

/// One message-passing round on the raw path.
fn layer_step_raw(params: &WcgcnParams, prep: &PreparedGraph, gamma: &Tensor) -> Result<Tensor> {
    let cfg = &params.cfg;
    let gd = cfg.gamma_dim();
    if gamma.shape() != [prep.k, gd] {
        return Err(Error::Shape(format!(
            "state {:?}, expected [{}, {gd}]",
            gamma.shape(),
            prep.k
        )));
    }
    let e = prep.srcs.len();
    let edge_dim = prep.edge_feats.cols();
    let mut msg_in = Vec::with_capacity(e * (gd + edge_dim));
    for idx in 0..e {
        msg_in.extend_from_slice(gamma.row(prep.srcs[idx]));
        msg_in.extend_from_slice(prep.edge_feats.row(idx));
    }
    let messages = mlp_forward(&params.mlp1, &Tensor::new(&[e, gd + edge_dim], msg_in))?;
    let agg = aggregate_raw(cfg, &messages, &prep.dsts, prep.k);
    let w1 = agg.cols();
    let sd = prep.static_feats.cols();
    let mut comb_in = Vec::with_capacity(prep.k * (sd + gd + w1));
    for i in 0..prep.k {
        comb_in.extend_from_slice(prep.static_feats.row(i));
        comb_in.extend_from_slice(gamma.row(i));
        comb_in.extend_from_slice(agg.row(i));
    }
    let y = mlp_forward(&params.mlp2, &Tensor::new(&[prep.k, sd + gd + w1], comb_in))?;
    Ok(apply_beta_raw(cfg.beta, &y))
}

fn apply_beta_raw(beta: Beta, y: &Tensor) -> Tensor {
    match beta {
        Beta::Sigmoid => crate::nngrad::sigmoid_kernel(y),
        Beta::L2BallProjection => crate::nngrad::row_norm_ball_kernel(y),
    }
}

/// One message-passing round: public single-layer entry point.
pub fn layer_forward(params: &WcgcnParams, g: &WirelessGraph, state: &Tensor) -> Result<Tensor> {
    let prep = PreparedGraph::new(params, g)?;
    layer_step_raw(params, &prep, state)
}

fn forward_gamma_raw(params: &WcgcnParams, prep: &PreparedGraph) -> Result<Tensor> {
    let mut gamma = prep.gamma0.clone();
    for _ in 0..params.cfg.num_layers {
        gamma = layer_step_raw(params, prep, &gamma)?;
    }
    Ok(gamma)
}

fn alloc_from_gamma(cfg: &WcgcnConfig, gamma: &Tensor, pmax: f64) -> Allocation {
    let k = gamma.rows();
    match cfg.beta {
        Beta::Sigmoid => {
            // p = gamma * pmax, v = sqrt(p) on the real axis.
            let mut data = Vec::with_capacity(k * 2);
            for r in 0..k {
                data.push((gamma.at(r, 0) * pmax).sqrt());
                data.push(0.0);
            }
            Allocation::new(Tensor::new(&[k, 2], data))
        }
        Beta::L2BallProjection => {
            let mut out = gamma.clone();
            out.scale_assign(pmax.sqrt());
            Allocation::new(out)
        }
    }
}

/// Full S-layer forward pass producing a feasible allocation.
pub fn network_forward(params: &WcgcnParams, g: &WirelessGraph) -> Result<Allocation> {
    let prep = PreparedGraph::new(params, g)?;
    let gamma = forward_gamma_raw(params, &prep)?;
    Ok(alloc_from_gamma(&params.cfg, &gamma, prep.pmax))
}

/// Tape-free inference with its wall time.
pub fn infer(params: &WcgcnParams, g: &WirelessGraph) -> Result<(Allocation, Duration)> {
    let start = Instant::now();
    let alloc = network_forward(params, g)?;
    Ok((alloc, start.elapsed()))
}

/// Tape handles for both MLPs.
pub struct WcgcnNodeIds {
    pub mlp1: MlpNodeIds,
    pub mlp2: MlpNodeIds,
}

impl WcgcnNodeIds {
    pub fn bind(tape: &mut Tape, params: &WcgcnParams) -> Self {
        Self {
            mlp1: MlpNodeIds::bind(tape, &params.mlp1),
            mlp2: MlpNodeIds::bind(tape, &params.mlp2),
        }
    }

    /// Parameter leaves in [`WcgcnParams::tensors`] order.
    pub fn param_nodes(&self) -> Vec<NodeId> {
        let mut ids = self.mlp1.node_ids();
        ids.extend(self.mlp2.node_ids());
        ids
    }
}

fn forward_gamma_taped(
    tape: &mut Tape,
    ids: &WcgcnNodeIds,
    params: &WcgcnParams,
    prep: &PreparedGraph,
) -> Result<NodeId> {
    let cfg = &params.cfg;
    let statics = tape.constant(prep.static_feats.clone());
    let edge_feats = tape.constant(prep.edge_feats.clone());
    let mut gamma = tape.constant(prep.gamma0.clone());
    for _ in 0..cfg.num_layers {
        let gathered = tape.gather_rows(gamma, Rc::clone(&prep.srcs));
        let msg_in = tape.concat_cols(&[gathered, edge_feats]);
        let messages = mlp_forward_taped(tape, &ids.mlp1, msg_in)?;
        let agg = match cfg.aggregator {
            Aggregator::Max => tape.segment_max(messages, &prep.dsts, prep.k),
            Aggregator::Sum => tape.segment_sum(messages, Rc::from(prep.dsts.clone()), prep.k),
        };
        let comb_in = tape.concat_cols(&[statics, gamma, agg]);
        let y = mlp_forward_taped(tape, &ids.mlp2, comb_in)?;
        gamma = match cfg.beta {
            Beta::Sigmoid => tape.sigmoid(y),
            Beta::L2BallProjection => tape.row_norm_ball(y),
        };
    }
    Ok(gamma)
}

/// Taped network output as beamformer rows `[K, 2Nt]`.
fn forward_v_taped(
    tape: &mut Tape,
    ids: &WcgcnNodeIds,
    params: &WcgcnParams,
    prep: &PreparedGraph,
) -> Result<NodeId> {
    let gamma = forward_gamma_taped(tape, ids, params, prep)?;
    Ok(match params.cfg.beta {
        Beta::Sigmoid => {
            let p = tape.scale(gamma, prep.pmax);
            let vre = tape.sqrt(p);
            let zeros = tape.constant(Tensor::zeros(&[prep.k, 1]));
            tape.concat_cols(&[vre, zeros])
        }
        Beta::L2BallProjection => tape.scale(gamma, prep.pmax.sqrt()),
    })
}

/// Negative weighted sum rate of one instance, on the tape. Always uses the
/// full channel, regardless of how sparse the observed graph is.
fn instance_neg_rate_taped(tape: &mut Tape, v: NodeId, chan: &ChannelRealization) -> NodeId {
    let k = chan.num_pairs;
    let nt = chan.num_tx_antennas;
    assert_eq!(tape.value(v).shape(), &[k, 2 * nt], "beamformer rows vs channel size");
    let rows: Vec<NodeId> = (0..k).map(|j| tape.gather_rows(v, Rc::from(vec![j]))).collect();

    // |h^H v|^2 as two real dot products against constant coefficient vectors.
    let abs2 = |tape: &mut Tape, row: NodeId, j: usize, i: usize| -> NodeId {
        let h = chan.h(j, i);
        let mut c_re = Vec::with_capacity(2 * nt);
        let mut c_im = Vec::with_capacity(2 * nt);
        c_re.extend(h.iter().map(|c| c.re));
        c_re.extend(h.iter().map(|c| c.im));
        c_im.extend(h.iter().map(|c| -c.im));
        c_im.extend(h.iter().map(|c| c.re));
        let c_re = tape.constant(Tensor::new(&[2 * nt, 1], c_re));
        let c_im = tape.constant(Tensor::new(&[2 * nt, 1], c_im));
        let re = tape.matmul(row, c_re);
        let im = tape.matmul(row, c_im);
        let re2 = tape.square(re);
        let im2 = tape.square(im);
        tape.add(re2, im2)
    };

    let mut total: Option<NodeId> = None;
    for i in 0..k {
        let signal = abs2(tape, rows[i], i, i);
        let mut interference: Option<NodeId> = None;
        for (j, row) in rows.iter().enumerate() {
            if j == i {
                continue;
            }
            let term = abs2(tape, *row, j, i);
            interference = Some(match interference {
                Some(acc) => tape.add(acc, term),
                None => term,
            });
        }
        let den = match interference {
            Some(acc) => tape.add_const(acc, chan.noise[i]),
            None => tape.constant(Tensor::new(&[1, 1], vec![chan.noise[i]])),
        };
        let num_den = tape.add(signal, den);
        let log_top = tape.log(num_den);
        let log_bot = tape.log(den);
        let diff = tape.sub(log_top, log_bot);
        let rate = tape.scale(diff, chan.weights[i] / std::f64::consts::LN_2);
        total = Some(match total {
            Some(acc) => tape.add(acc, rate),
            None => rate,
        });
    }
    tape.scale(total.expect("K >= 1"), -1.0)
}

/// Mean negative weighted sum rate over a batch, recorded on `tape`.
pub fn unsup_loss_taped(
    tape: &mut Tape,
    ids: &WcgcnNodeIds,
    params: &WcgcnParams,
    batch: &[(&WirelessGraph, &ChannelRealization)],
) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("unsup_loss needs a nonempty batch".into()));
    }
    let mut total: Option<NodeId> = None;
    for (g, chan) in batch {
        let prep = PreparedGraph::new(params, g)?;
        let v = forward_v_taped(tape, ids, params, &prep)?;
        let neg = instance_neg_rate_taped(tape, v, chan);
        total = Some(match total {
            Some(acc) => tape.add(acc, neg),
            None => neg,
        });
    }
    Ok(tape.scale(total.unwrap(), 1.0 / batch.len() as f64))
}

/// Straight-line loss evaluation (no tape), for reporting.
pub fn unsup_loss(
    params: &WcgcnParams,
    batch: &[(&WirelessGraph, &ChannelRealization)],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("unsup_loss needs a nonempty batch".into()));
    }
    let mut total = 0.0;
    for (g, chan) in batch {
        let alloc = network_forward(params, g)?;
        let (_, obj) = crate::graph::sinr_and_rates(g, &alloc, chan)?;
        total -= obj;
    }
    Ok(total / batch.len() as f64)
}

/// How the input feature scales are chosen before training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureScale {
    /// `1 / rms` of the channel feature entries over (up to) the first 256
    /// training instances, separately for node and edge blocks.
    Auto,
    Fixed { node: f64, edge: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seed for the per-epoch shuffles.
    pub shuffle_seed: u64,
    pub feature_scale: FeatureScale,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            adam: AdamConfig::default(),
            shuffle_seed: 0,
            feature_scale: FeatureScale::Auto,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v * v;
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    (sum / n as f64).sqrt()
}

/// Resolves `FeatureScale::Auto` against a sample of the training data.
pub fn resolve_feature_scale(
    params: &mut WcgcnParams,
    mode: FeatureScale,
    data: &[(WirelessGraph, ChannelRealization)],
) {
    match mode {
        FeatureScale::Fixed { node, edge } => {
            params.node_scale = node;
            params.edge_scale = edge;
        }
        FeatureScale::Auto => {
            let nt = params.cfg.num_tx_antennas;
            let sample = &data[..data.len().min(256)];
            let node_rms = rms(sample.iter().flat_map(|(g, _)| {
                (0..g.num_nodes()).flat_map(|r| g.node_features().row(r)[..2 * nt].iter().copied())
            }));
            let edge_rms = rms(sample.iter().flat_map(|(g, _)| g.edge_features().data().iter().copied()));
            params.node_scale = if node_rms > 0.0 { 1.0 / node_rms } else { 1.0 };
            params.edge_scale = if edge_rms > 0.0 { 1.0 / edge_rms } else { 1.0 };
        }
    }
}

/// Mini-batch adam on the unsupervised loss. The dataset is shuffled each
/// epoch with a seeded stream, so a run is reproducible bit-for-bit.
pub fn train(
    params: &mut WcgcnParams,
    data: &[(WirelessGraph, ChannelRealization)],
    cfg: &TrainConfig,
    mut epoch_hook: Option<&mut dyn FnMut(usize, &WcgcnParams, f64)>,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if cfg.batch_size < 1 || cfg.epochs < 1 {
        return Err(Error::InvalidConfig("epochs and batch_size must be >= 1".into()));
    }
    resolve_feature_scale(params, cfg.feature_scale, data);

    let preps: Vec<PreparedGraph> = data
        .iter()
        .map(|(g, _)| PreparedGraph::new(params, g))
        .collect::<Result<_>>()?;

    let mut adam = AdamState::new(cfg.adam, &params.tensors());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = crate::scenario::stream_rng(cfg.shuffle_seed, epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grad_sum: Option<Vec<Tensor>> = None;
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let mut tape = Tape::new();
                let ids = WcgcnNodeIds::bind(&mut tape, params);
                let v = forward_v_taped(&mut tape, &ids, params, &preps[idx])?;
                let loss = instance_neg_rate_taped(&mut tape, v, &data[idx].1);
                let loss_val = tape.value(loss).item();
                if !loss_val.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss {loss_val} at epoch {epoch}, sample {idx}"
                    )));
                }
                batch_loss += loss_val;
                let grads = tape.backward(loss)?;
                let sample_grads: Vec<Tensor> = ids
                    .param_nodes()
                    .iter()
                    .map(|&id| grads.wrt(id, &tape))
                    .collect();
                match &mut grad_sum {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&sample_grads) {
                            a.add_assign(g);
                        }
                    }
                    None => grad_sum = Some(sample_grads),
                }
            }
            let mut grads = grad_sum.unwrap();
            let inv = 1.0 / chunk.len() as f64;
            for g in &mut grads {
                g.scale_assign(inv);
            }
            adam_step(&mut adam, &mut params.tensors_mut(), &grads)?;
            epoch_loss += batch_loss;
        }
        let mean_loss = epoch_loss / data.len() as f64;
        epoch_losses.push(mean_loss);
        if let Some(hook) = epoch_hook.as_deref_mut() {
            hook(epoch, params, mean_loss);
        }
    }
    Ok(TrainReport { epoch_losses })
}

// --- checkpoint io ---------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"AGCK";
const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: WcgcnConfig,
    node_scale: f64,
    edge_scale: f64,
    mlp1_widths: Vec<usize>,
    mlp2_widths: Vec<usize>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Writes the binary checkpoint plus its JSON sidecar.
pub fn save_checkpoint(params: &WcgcnParams, path: &Path) -> Result<()> {
    let meta = CheckpointMeta {
        config: params.cfg.clone(),
        node_scale: params.node_scale,
        edge_scale: params.edge_scale,
        mlp1_widths: params.mlp1.widths(),
        mlp2_widths: params.mlp2.widths(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    let tensors = params.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<WcgcnParams> {
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(sidecar_path(path))?)
        .map_err(|e| Error::CorruptData(format!("bad checkpoint sidecar: {e}")))?;
    let bytes = fs::read(path)?;
    let mut cur = &bytes[..];
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(Error::CorruptData("checkpoint truncated".into()));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(4)? != CKPT_MAGIC {
        return Err(Error::CorruptData("bad checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::FormatVersion { found: version, expected: CKPT_VERSION });
    }
    let n_tensors = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if rank == 0 || rank > 3 {
            return Err(Error::CorruptData(format!("tensor rank {rank} out of range")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(n * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(&shape, data));
    }
    if !cur.is_empty() {
        return Err(Error::CorruptData("trailing bytes after checkpoint tensors".into()));
    }
    rebuild_params(meta, tensors)
}

fn rebuild_params(meta: CheckpointMeta, tensors: Vec<Tensor>) -> Result<WcgcnParams> {
    meta.config.validate()?;
    if meta.mlp1_widths != meta.config.mlp1_widths() || meta.mlp2_widths != meta.config.mlp2_widths()
    {
        return Err(Error::CorruptData("sidecar widths disagree with config".into()));
    }
    let n1 = (meta.mlp1_widths.len() - 1) * 2;
    let n2 = (meta.mlp2_widths.len() - 1) * 2;
    if tensors.len() != n1 + n2 {
        return Err(Error::CorruptData(format!(
            "checkpoint has {} tensors, expected {}",
            tensors.len(),
            n1 + n2
        )));
    }
    let mut it = tensors.into_iter();
    let mut read_mlp = |widths: &[usize]| -> Result<MlpParams> {
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for win in widths.windows(2) {
            let w = it.next().unwrap();
            let b = it.next().unwrap();
            if w.shape() != [win[0], win[1]] || b.shape() != [win[1]] {
                return Err(Error::CorruptData(format!(
                    "tensor shapes {:?}/{:?} disagree with widths {win:?}",
                    w.shape(),
                    b.shape()
                )));
            }
            layers.push(crate::nngrad::Layer { w, b });
        }
        Ok(MlpParams { layers })
    };
    let mlp1 = read_mlp(&meta.mlp1_widths)?;
    let mlp2 = read_mlp(&meta.mlp2_widths)?;
    Ok(WcgcnParams {
        cfg: meta.config,
        mlp1,
        mlp2,
        node_scale: meta.node_scale,
        edge_scale: meta.edge_scale,
    })
}
