//! The wireless channel graph: nodes are transceiver pairs, directed edges
//! are interference links within the distance threshold, features carry the
//! channel state.
//!
//! Layout conventions (complex values as a re-block then an im-block):
//!
//! * node feature row `k`: `[re(h_kk) (Nt), im(h_kk) (Nt), w_k, sigma2_k]`,
//!   width `2*Nt + 2`;
//! * edge feature for `(j, i)`: `[re(h_ji), im(h_ji), re(h_ij), im(h_ij)]`,
//!   width `4*Nt`.
//!
//! The graph is what a model observes (possibly thresholded); objective
//! evaluation always uses the full [`ChannelRealization`].

use num_complex::Complex64;
use serde::Serialize;

use crate::nngrad::Tensor;
use crate::scenario::{dist, ChannelRealization, Scenario, SystemConfig};
use crate::{Error, Result};

/// Directed graph with node/edge feature matrices.
///
/// Edges are kept sorted by `(dst, src)`; the edge list may contain
/// duplicates (multi-edges), which MAX aggregation must be insensitive to.
#[derive(Clone, Debug, PartialEq)]
pub struct WirelessGraph {
    num_nodes: usize,
    num_tx_antennas: usize,
    pmax: f64,
    /// `[K, 2*Nt + 2]`
    node_features: Tensor,
    /// `(src, dst)` pairs.
    edges: Vec<(usize, usize)>,
    /// `[E, 4*Nt]`, aligned with `edges`.
    edge_features: Tensor,
}

impl WirelessGraph {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_tx_antennas(&self) -> usize {
        self.num_tx_antennas
    }

    pub fn pmax(&self) -> f64 {
        self.pmax
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_features(&self) -> &Tensor {
        &self.edge_features
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Node-feature width `2*Nt + 2`.
    pub fn node_dim(&self) -> usize {
        2 * self.num_tx_antennas + 2
    }

    /// Edge-feature width `4*Nt`.
    pub fn edge_dim(&self) -> usize {
        4 * self.num_tx_antennas
    }

    pub fn from_parts(
        num_nodes: usize,
        num_tx_antennas: usize,
        pmax: f64,
        node_features: Tensor,
        mut edges: Vec<(usize, usize)>,
        edge_features: Tensor,
    ) -> Result<Self> {
        if node_features.shape() != [num_nodes, 2 * num_tx_antennas + 2] {
            return Err(Error::Shape(format!(
                "node features {:?}, expected [{num_nodes}, {}]",
                node_features.shape(),
                2 * num_tx_antennas + 2
            )));
        }
        if edge_features.shape() != [edges.len(), 4 * num_tx_antennas] {
            return Err(Error::Shape(format!(
                "edge features {:?}, expected [{}, {}]",
                edge_features.shape(),
                edges.len(),
                4 * num_tx_antennas
            )));
        }
        if edges.iter().any(|&(j, i)| j == i || j >= num_nodes || i >= num_nodes) {
            return Err(Error::InvalidConfig("edge list has a self-edge or out-of-range node".into()));
        }
        let edge_features = sort_edges(&mut edges, edge_features);
        Ok(Self { num_nodes, num_tx_antennas, pmax, node_features, edges, edge_features })
    }

    /// Appends a duplicate of edge `e` (same endpoints and features).
    pub fn with_duplicated_edge(&self, e: usize) -> Self {
        let mut edges = self.edges.clone();
        edges.push(self.edges[e]);
        let mut data = self.edge_features.data().to_vec();
        data.extend_from_slice(self.edge_features.row(e));
        let feats = Tensor::new(&[edges.len(), self.edge_dim()], data);
        let feats = sort_edges(&mut edges, feats);
        Self { edges, edge_features: feats, ..self.clone() }
    }

    /// Debug dump of features and edge list.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Dump<'a> {
            num_nodes: usize,
            num_tx_antennas: usize,
            pmax: f64,
            node_features: Vec<&'a [f64]>,
            edges: &'a [(usize, usize)],
            edge_features: Vec<&'a [f64]>,
        }
        let d = Dump {
            num_nodes: self.num_nodes,
            num_tx_antennas: self.num_tx_antennas,
            pmax: self.pmax,
            node_features: (0..self.num_nodes).map(|r| self.node_features.row(r)).collect(),
            edges: &self.edges,
            edge_features: (0..self.edges.len()).map(|r| self.edge_features.row(r)).collect(),
        };
        serde_json::to_value(d).expect("graph dump is serializable")
    }
}

/// Sorts edges by `(dst, src)` keeping features aligned; duplicate edges are
/// kept in insertion order after (dst, src), which makes aggregation
/// deterministic.
fn sort_edges(edges: &mut [(usize, usize)], features: Tensor) -> Tensor {
    let dim = features.shape()[1];
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by_key(|&e| (edges[e].1, edges[e].0, e));
    let sorted_edges: Vec<(usize, usize)> = order.iter().map(|&e| edges[e]).collect();
    edges.copy_from_slice(&sorted_edges);
    let mut data = Vec::with_capacity(features.len());
    for &e in &order {
        data.extend_from_slice(features.row(e));
    }
    Tensor::new(&[edges.len(), dim], data)
}

/// Builds the channel graph: edge `(j, i)` iff `j != i` and
/// `dist(tx_j, rx_i) <= edge_threshold`.
pub fn build_graph(
    cfg: &SystemConfig,
    scen: &Scenario,
    chan: &ChannelRealization,
) -> Result<WirelessGraph> {
    cfg.validate()?;
    let k = cfg.num_pairs;
    let nt = cfg.num_tx_antennas;
    if scen.num_pairs() != k || chan.num_pairs != k || chan.num_tx_antennas != nt {
        return Err(Error::InvalidConfig("scenario/channel/config sizes disagree".into()));
    }
    let mut node = Vec::with_capacity(k * (2 * nt + 2));
    for i in 0..k {
        let hkk = chan.h(i, i);
        node.extend(hkk.iter().map(|c| c.re));
        node.extend(hkk.iter().map(|c| c.im));
        node.push(chan.weights[i]);
        node.push(chan.noise[i]);
    }
    let mut edges = Vec::new();
    let mut feats = Vec::new();
    for i in 0..k {
        for j in 0..k {
            if j == i {
                continue;
            }
            if dist(scen.tx_positions[j], scen.rx_positions[i]) <= cfg.edge_threshold {
                edges.push((j, i));
                let hji = chan.h(j, i);
                let hij = chan.h(i, j);
                feats.extend(hji.iter().map(|c| c.re));
                feats.extend(hji.iter().map(|c| c.im));
                feats.extend(hij.iter().map(|c| c.re));
                feats.extend(hij.iter().map(|c| c.im));
            }
        }
    }
    let e = edges.len();
    WirelessGraph::from_parts(
        k,
        nt,
        cfg.pmax,
        Tensor::new(&[k, 2 * nt + 2], node),
        edges,
        Tensor::new(&[e, 4 * nt], feats),
    )
}

/// A bijection over node labels; `apply(i)` is the new label of node `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &v in &map {
            if v >= n || seen[v] {
                return Err(Error::NonBijective(n));
            }
            seen[v] = true;
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self { map: (0..n).collect() }
    }

    /// Uniformly random permutation (Fisher-Yates).
    pub fn random(n: usize, rng: &mut impl rand::Rng) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            map.swap(i, j);
        }
        Self { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &v) in self.map.iter().enumerate() {
            inv[v] = i;
        }
        Self { map: inv }
    }

    /// Relabels the rows of a `[n, d]` matrix: row `i` moves to row `pi(i)`.
    pub fn permute_rows(&self, m: &Tensor) -> Tensor {
        assert_eq!(m.rows(), self.map.len());
        let d = m.cols();
        let mut out = vec![0.0; m.len()];
        for i in 0..m.rows() {
            out[self.apply(i) * d..(self.apply(i) + 1) * d].copy_from_slice(m.row(i));
        }
        Tensor::new(m.shape(), out)
    }
}

/// Relabels a graph's nodes: `Z'_{pi(i)} = Z_i`, edge `(j, i)` becomes
/// `(pi(j), pi(i))` with the same feature vector.
pub fn permute(g: &WirelessGraph, pi: &Permutation) -> Result<WirelessGraph> {
    if pi.len() != g.num_nodes() {
        return Err(Error::NonBijective(g.num_nodes()));
    }
    let edges: Vec<(usize, usize)> = g
        .edges
        .iter()
        .map(|&(j, i)| (pi.apply(j), pi.apply(i)))
        .collect();
    WirelessGraph::from_parts(
        g.num_nodes,
        g.num_tx_antennas,
        g.pmax,
        pi.permute_rows(&g.node_features),
        edges,
        g.edge_features.clone(),
    )
}

/// Per-node optimization variable: row `k` holds the beamformer `v_k` as
/// `[re (Nt), im (Nt)]`. For `Nt = 1` power control, `|v|^2` is the power.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    /// `[K, 2*Nt]`
    pub gamma: Tensor,
}

impl Allocation {
    pub fn new(gamma: Tensor) -> Self {
        assert_eq!(gamma.shape().len(), 2);
        assert_eq!(gamma.cols() % 2, 0, "allocation rows must be re/im pairs");
        Self { gamma }
    }

    pub fn zeros(num_pairs: usize, nt: usize) -> Self {
        Self { gamma: Tensor::zeros(&[num_pairs, 2 * nt]) }
    }

    /// Builds an Nt=1 allocation from per-pair powers (`v = sqrt(p)`).
    pub fn from_powers(p: &[f64]) -> Self {
        let mut data = Vec::with_capacity(p.len() * 2);
        for &pk in p {
            data.push(pk.sqrt());
            data.push(0.0);
        }
        Self { gamma: Tensor::new(&[p.len(), 2], data) }
    }

    pub fn from_beamformers(v: &[Vec<Complex64>]) -> Self {
        let nt = v[0].len();
        let mut data = Vec::with_capacity(v.len() * 2 * nt);
        for row in v {
            assert_eq!(row.len(), nt);
            data.extend(row.iter().map(|c| c.re));
            data.extend(row.iter().map(|c| c.im));
        }
        Self { gamma: Tensor::new(&[v.len(), 2 * nt], data) }
    }

    pub fn num_pairs(&self) -> usize {
        self.gamma.rows()
    }

    pub fn num_tx_antennas(&self) -> usize {
        self.gamma.cols() / 2
    }

    /// Beamformer of pair `k` as complex values.
    pub fn beamformer(&self, k: usize) -> Vec<Complex64> {
        let nt = self.num_tx_antennas();
        let row = self.gamma.row(k);
        (0..nt).map(|t| Complex64::new(row[t], row[nt + t])).collect()
    }

    /// `‖v_k‖²`.
    pub fn power(&self, k: usize) -> f64 {
        self.gamma.row(k).iter().map(|x| x * x).sum()
    }
}

/// Relabels allocation rows alongside a graph permutation.
pub fn permute_alloc(alloc: &Allocation, pi: &Permutation) -> Result<Allocation> {
    if pi.len() != alloc.num_pairs() {
        return Err(Error::NonBijective(alloc.num_pairs()));
    }
    Ok(Allocation { gamma: pi.permute_rows(&alloc.gamma) })
}

/// `true` iff every row satisfies `‖v_k‖² <= pmax` (tolerance 1e-9).
pub fn check_feasible(alloc: &Allocation, pmax: f64) -> bool {
    (0..alloc.num_pairs()).all(|k| alloc.power(k) <= pmax + 1e-9)
}

/// Per-receiver SINR and the weighted sum rate, always on full CSI.
///
/// `SINR_k = |h_kk^H v_k|² / (sum_{j != k} |h_jk^H v_j|² + sigma2_k)` and the
/// objective is `sum_k w_k log2(1 + SINR_k)`.
pub fn sinr_and_rates(
    g: &WirelessGraph,
    alloc: &Allocation,
    chan: &ChannelRealization,
) -> Result<(Vec<f64>, f64)> {
    let k = g.num_nodes();
    if alloc.num_pairs() != k
        || chan.num_pairs != k
        || alloc.num_tx_antennas() != g.num_tx_antennas()
        || chan.num_tx_antennas != g.num_tx_antennas()
    {
        return Err(Error::Shape(format!(
            "allocation [{}, {}] vs graph K={k}, Nt={}",
            alloc.num_pairs(),
            alloc.num_tx_antennas(),
            g.num_tx_antennas()
        )));
    }
    let beams: Vec<Vec<Complex64>> = (0..k).map(|i| alloc.beamformer(i)).collect();
    let mut sinr = Vec::with_capacity(k);
    let mut objective = 0.0;
    for i in 0..k {
        let signal = dot_h(chan.h(i, i), &beams[i]).norm_sqr();
        let mut interference = 0.0;
        for (j, beam) in beams.iter().enumerate() {
            if j != i {
                interference += dot_h(chan.h(j, i), beam).norm_sqr();
            }
        }
        let s = signal / (interference + chan.noise[i]);
        sinr.push(s);
        objective += chan.weights[i] * (1.0 + s).log2();
    }
    Ok((sinr, objective))
}

/// `h^H v` for equal-length complex slices.
pub fn dot_h(h: &[Complex64], v: &[Complex64]) -> Complex64 {
    h.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

/// Relabels a channel realization consistently with a node permutation:
/// pair `pi(k)` of the result is pair `k` of the input.
pub fn permute_channel(chan: &ChannelRealization, pi: &Permutation) -> ChannelRealization {
    let k = chan.num_pairs;
    let nt = chan.num_tx_antennas;
    let mut h = vec![Complex64::new(0.0, 0.0); k * k * nt];
    for j in 0..k {
        for i in 0..k {
            let src = chan.h(j, i);
            let base = (pi.apply(j) * k + pi.apply(i)) * nt;
            h[base..base + nt].copy_from_slice(src);
        }
    }
    let mut weights = vec![0.0; k];
    let mut noise = vec![0.0; k];
    for i in 0..k {
        weights[pi.apply(i)] = chan.weights[i];
        noise[pi.apply(i)] = chan.noise[i];
    }
    ChannelRealization::new(k, nt, h, weights, noise)
}
