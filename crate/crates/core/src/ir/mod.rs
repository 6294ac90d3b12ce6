//! Neutral computation-graph representation shared by every other module.
//!
//! A [`Network`] describes structure and cost only: layers with channel
//! counts, an exact spatial ratio and a [`CostVector`], plus directed edges.
//! Layers are kept sorted by id, so a layer's index doubles as its
//! lexicographic rank; traversals that iterate neighbours in index order
//! therefore use the canonical tie-break.

pub(crate) mod json;
mod subnet;
mod validate;

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::rational::Rational;

pub use json::{parse_network, serialize_network, IrFormatError};
pub use subnet::{subnetwork_from_layers, SubNetwork, SubnetError};
pub(crate) use subnet::{siso_boundary, subnet_from_mask};
pub use validate::{validate_network, Rule, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Dwconv,
    Dense,
    Pool,
    Act,
    Bn,
    Add,
    Mul,
    Concat,
    Input,
    Output,
    Other,
}

impl LayerKind {
    pub const ALL: [LayerKind; 12] = [
        LayerKind::Conv,
        LayerKind::Dwconv,
        LayerKind::Dense,
        LayerKind::Pool,
        LayerKind::Act,
        LayerKind::Bn,
        LayerKind::Add,
        LayerKind::Mul,
        LayerKind::Concat,
        LayerKind::Input,
        LayerKind::Output,
        LayerKind::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Dwconv => "dwconv",
            LayerKind::Dense => "dense",
            LayerKind::Pool => "pool",
            LayerKind::Act => "act",
            LayerKind::Bn => "bn",
            LayerKind::Add => "add",
            LayerKind::Mul => "mul",
            LayerKind::Concat => "concat",
            LayerKind::Input => "input",
            LayerKind::Output => "output",
            LayerKind::Other => "other",
        }
    }

    /// Element-wise merges: every inbound edge must carry the same width.
    pub fn is_elementwise_merge(self) -> bool {
        matches!(self, LayerKind::Add | LayerKind::Mul)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LayerKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown layer kind `{s}`"))
    }
}

/// Static cost of a layer or a sum of layers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostVector {
    pub flops: u64,
    pub params: u64,
    /// Measured latency per device label, in microseconds.
    pub latency_us: BTreeMap<String, Rational>,
}

impl CostVector {
    pub fn new(flops: u64, params: u64) -> Self {
        CostVector {
            flops,
            params,
            latency_us: BTreeMap::new(),
        }
    }

    pub fn with_latency(mut self, device: &str, us: Rational) -> Self {
        self.latency_us.insert(device.to_string(), us);
        self
    }

    pub fn add_assign(&mut self, other: &CostVector) {
        self.flops = self.flops.saturating_add(other.flops);
        self.params = self.params.saturating_add(other.params);
        for (dev, v) in &other.latency_us {
            let slot = self
                .latency_us
                .entry(dev.clone())
                .or_insert_with(Rational::zero);
            *slot += v;
        }
    }

    pub fn sum<'a>(costs: impl IntoIterator<Item = &'a CostVector>) -> CostVector {
        let mut total = CostVector::default();
        for c in costs {
            total.add_assign(c);
        }
        total
    }
}

/// Selects a scalar out of a [`CostVector`]: `flops`, `params` or
/// `latency_us:<device>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MetricSelector {
    Flops,
    Params,
    Latency(String),
}

impl MetricSelector {
    /// Missing latency entries count as zero.
    pub fn extract(&self, cost: &CostVector) -> Rational {
        match self {
            MetricSelector::Flops => Rational::from(cost.flops),
            MetricSelector::Params => Rational::from(cost.params),
            MetricSelector::Latency(dev) => cost
                .latency_us
                .get(dev)
                .cloned()
                .unwrap_or_else(Rational::zero),
        }
    }
}

impl FromStr for MetricSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flops" => Ok(MetricSelector::Flops),
            "params" => Ok(MetricSelector::Params),
            _ => match s.strip_prefix("latency_us:") {
                Some(dev) if !dev.is_empty() => Ok(MetricSelector::Latency(dev.to_string())),
                _ => Err(format!(
                    "unknown metric `{s}` (expected flops, params or latency_us:<device>)"
                )),
            },
        }
    }
}

impl fmt::Display for MetricSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSelector::Flops => f.write_str("flops"),
            MetricSelector::Params => f.write_str("params"),
            MetricSelector::Latency(dev) => write!(f, "latency_us:{dev}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    pub id: String,
    pub kind: LayerKind,
    pub in_channels: u32,
    pub out_channels: u32,
    /// Output spatial size over input spatial size (1/2 for a stride-2 conv).
    pub spatial_change: Rational,
    pub cost: CostVector,
}

impl Layer {
    pub fn new(id: impl Into<String>, kind: LayerKind, in_channels: u32, out_channels: u32) -> Self {
        Layer {
            id: id.into(),
            kind,
            in_channels,
            out_channels,
            spatial_change: Rational::one(),
            cost: CostVector::default(),
        }
    }

    pub fn with_spatial(mut self, spatial_change: Rational) -> Self {
        self.spatial_change = spatial_change;
        self
    }

    pub fn with_cost(mut self, cost: CostVector) -> Self {
        self.cost = cost;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetworkError {
    #[error("duplicate layer id `{0}`")]
    DuplicateLayer(String),
}

/// Immutable computation graph.
///
/// Edges may reference unknown layers and the graph may be cyclic; such
/// defects are reported by [`validate_network`] rather than rejected here.
/// Algorithms other than validation assume a valid network.
#[derive(Debug, Clone)]
pub struct Network {
    name: String,
    layers: Vec<Layer>,
    edges: BTreeSet<(String, String)>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    index: HashMap<String, usize>,
    inbound: Vec<Vec<usize>>,
    outbound: Vec<Vec<usize>>,
    is_input: Vec<bool>,
    is_output: Vec<bool>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.layers == other.layers
            && self.edges == other.edges
            && self.inputs == other.inputs
            && self.outputs == other.outputs
    }
}

impl Eq for Network {}

impl Network {
    /// Builds a network. Input and output lists are stored sorted and
    /// de-duplicated.
    pub fn new(
        name: impl Into<String>,
        mut layers: Vec<Layer>,
        edges: impl IntoIterator<Item = (String, String)>,
        inputs: impl IntoIterator<Item = String>,
        outputs: impl IntoIterator<Item = String>,
    ) -> Result<Network, NetworkError> {
        layers.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = layers.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(NetworkError::DuplicateLayer(w[0].id.clone()));
        }
        let index: HashMap<String, usize> = layers
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id.clone(), i))
            .collect();
        let edges: BTreeSet<(String, String)> = edges.into_iter().collect();
        let n = layers.len();
        let mut inbound = vec![Vec::new(); n];
        let mut outbound = vec![Vec::new(); n];
        for (s, d) in &edges {
            if let (Some(&si), Some(&di)) = (index.get(s), index.get(d)) {
                outbound[si].push(di);
                inbound[di].push(si);
            }
        }
        for adj in inbound.iter_mut().chain(outbound.iter_mut()) {
            adj.sort_unstable();
        }
        let inputs: BTreeSet<String> = inputs.into_iter().collect();
        let outputs: BTreeSet<String> = outputs.into_iter().collect();
        let mut is_input = vec![false; n];
        let mut is_output = vec![false; n];
        for id in &inputs {
            if let Some(&i) = index.get(id) {
                is_input[i] = true;
            }
        }
        for id in &outputs {
            if let Some(&i) = index.get(id) {
                is_output[i] = true;
            }
        }
        Ok(Network {
            name: name.into(),
            layers,
            edges,
            inputs: inputs.into_iter().collect(),
            outputs: outputs.into_iter().collect(),
            index,
            inbound,
            outbound,
            is_input,
            is_output,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Layers sorted by id.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn layer(&self, id: &str) -> Option<&Layer> {
        self.index_of(id).map(|i| &self.layers[i])
    }

    pub fn layer_at(&self, i: usize) -> &Layer {
        &self.layers[i]
    }

    /// Inbound neighbours of layer `i`, ascending by id.
    pub fn inbound(&self, i: usize) -> &[usize] {
        &self.inbound[i]
    }

    /// Outbound neighbours of layer `i`, ascending by id.
    pub fn outbound(&self, i: usize) -> &[usize] {
        &self.outbound[i]
    }

    pub fn is_graph_input(&self, i: usize) -> bool {
        self.is_input[i]
    }

    pub fn is_graph_output(&self, i: usize) -> bool {
        self.is_output[i]
    }

    /// Inbound edges plus one external connection for a graph input.
    pub fn in_connections(&self, i: usize) -> usize {
        self.inbound[i].len() + usize::from(self.is_input[i])
    }

    /// Outbound edges plus one external connection for a graph output.
    pub fn out_connections(&self, i: usize) -> usize {
        self.outbound[i].len() + usize::from(self.is_output[i])
    }

    /// Kahn's algorithm with a lexicographic-id tie-break; `None` if cyclic.
    pub fn topo_order(&self) -> Option<Vec<usize>> {
        let n = self.len();
        let mut indeg: Vec<usize> = self.inbound.iter().map(Vec::len).collect();
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(v)) = ready.pop() {
            order.push(v);
            for &u in &self.outbound[v] {
                indeg[u] -= 1;
                if indeg[u] == 0 {
                    ready.push(Reverse(u));
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn total_cost(&self) -> CostVector {
        CostVector::sum(self.layers.iter().map(|l| &l.cost))
    }

    /// Copy with a different name.
    pub fn renamed(&self, name: impl Into<String>) -> Network {
        let mut n = self.clone();
        n.name = name.into();
        n
    }
}


#[cfg(test)]
mod tests {
    use super::testnets::*;
    use super::*;

    #[test]
    fn layers_sorted_and_adjacency_built() {
        let n = diamond();
        let ids: Vec<_> = n.layers().iter().map(|l| l.id.as_str()).collect();
        assert_eq!(ids, ["l0", "l1", "l2", "l3"]);
        assert_eq!(n.outbound(0), &[1, 2]);
        assert_eq!(n.inbound(3), &[1, 2]);
        assert_eq!(n.in_connections(0), 1);
        assert_eq!(n.out_connections(3), 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Network::new(
            "x",
            vec![Layer::new("a", LayerKind::Act, 1, 1), Layer::new("a", LayerKind::Act, 1, 1)],
            [],
            [],
            [],
        )
        .unwrap_err();
        assert_eq!(err, NetworkError::DuplicateLayer("a".into()));
    }

    #[test]
    fn topo_order_is_lexicographic_among_ready_layers() {
        let n = diamond();
        assert_eq!(n.topo_order().unwrap(), vec![0, 1, 2, 3]);
        let cyc = Network::new(
            "c",
            vec![Layer::new("a", LayerKind::Act, 1, 1), Layer::new("b", LayerKind::Act, 1, 1)],
            [edge("a", "b"), edge("b", "a")],
            [],
            [],
        )
        .unwrap();
        assert!(cyc.topo_order().is_none());
    }

    #[test]
    fn metric_selector_parses() {
        assert_eq!("flops".parse::<MetricSelector>().unwrap(), MetricSelector::Flops);
        assert_eq!(
            "latency_us:cpu0".parse::<MetricSelector>().unwrap(),
            MetricSelector::Latency("cpu0".into())
        );
        assert!("latency_us:".parse::<MetricSelector>().is_err());
        let c = CostVector::new(10, 2);
        assert!(MetricSelector::Latency("gpu".into()).extract(&c).is_zero());
    }
}
