use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{CostVector, Network};
use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubnetError {
    #[error("empty layer set")]
    Empty,
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("not single-input/single-output: {0}")]
    NotSiso(String),
    #[error("paths from `{input}` to `{output}` disagree on spatial change")]
    InconsistentSpatial { input: String, output: String },
}

/// A single-input/single-output region of a source network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubNetwork {
    /// Name of the network the layers belong to.
    #[serde(rename = "source_network")]
    pub source: String,
    #[serde(rename = "member_ids")]
    pub layer_ids: BTreeSet<String>,
    pub input_layer: String,
    pub output_layer: String,
    pub in_channels: u32,
    pub out_channels: u32,
    #[serde(with = "super::json::spatial_serde")]
    pub spatial_change: Rational,
    #[serde(with = "super::json::cost_serde")]
    pub cost: CostVector,
}

impl SubNetwork {
    pub fn len(&self) -> usize {
        self.layer_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layer_ids.is_empty()
    }
}

/// Boundary of a SISO member set, by layer index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Boundary {
    pub input: usize,
    pub output: usize,
    pub spatial: Rational,
}

/// Connection-level SISO predicate on a membership mask.
///
/// Exactly one boundary connection may enter the set (a graph input counts
/// as one external connection) and it must land on a layer with no other
/// inbound connection; every connection leaving the set must originate at a
/// single layer (a graph output counts as one external connection); the set
/// must be weakly connected and every input→output path must have the same
/// spatial product.
pub(crate) fn siso_boundary(net: &Network, members: &[bool]) -> Result<Boundary, SubnetError> {
    let n = net.len();
    let ids: Vec<usize> = (0..n).filter(|&i| members[i]).collect();
    if ids.is_empty() {
        return Err(SubnetError::Empty);
    }

    let mut entry = None;
    let mut boundary_in = 0usize;
    for &v in &ids {
        let ext = usize::from(net.is_graph_input(v))
            + net.inbound(v).iter().filter(|&&p| !members[p]).count();
        if ext > 0 {
            boundary_in += ext;
            entry = Some(v);
        }
    }
    if boundary_in != 1 {
        return Err(SubnetError::NotSiso(format!(
            "{boundary_in} boundary input connections"
        )));
    }
    let input = entry.expect("one boundary connection implies an entry layer");
    if net.in_connections(input) > 1 {
        return Err(SubnetError::NotSiso(format!(
            "input layer `{}` has {} inbound connections",
            net.layer_at(input).id,
            net.in_connections(input)
        )));
    }

    let sources: Vec<usize> = ids
        .iter()
        .copied()
        .filter(|&v| net.is_graph_output(v) || net.outbound(v).iter().any(|&s| !members[s]))
        .collect();
    if sources.len() != 1 {
        let names: Vec<&str> = sources.iter().map(|&v| net.layer_at(v).id.as_str()).collect();
        return Err(SubnetError::NotSiso(format!(
            "{} boundary output layers {:?}",
            sources.len(),
            names
        )));
    }
    let output = sources[0];

    // Weak connectivity.
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([input]);
    seen[input] = true;
    let mut count = 0;
    while let Some(v) = queue.pop_front() {
        count += 1;
        for &u in net.inbound(v).iter().chain(net.outbound(v)) {
            if members[u] && !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    if count != ids.len() {
        return Err(SubnetError::NotSiso("layer set is not connected".into()));
    }

    // Spatial product along every path, in member-restricted topological order.
    let mut indeg: Vec<usize> = vec![0; n];
    for &v in &ids {
        indeg[v] = net.inbound(v).iter().filter(|&&p| members[p]).count();
    }
    let mut ready: Vec<usize> = ids.iter().copied().filter(|&v| indeg[v] == 0).collect();
    let mut prod: Vec<Option<Rational>> = vec![None; n];
    let mut visited = 0;
    let inconsistent = || SubnetError::InconsistentSpatial {
        input: net.layer_at(input).id.clone(),
        output: net.layer_at(output).id.clone(),
    };
    while let Some(v) = ready.pop() {
        visited += 1;
        let mut incoming: Option<Rational> = None;
        for &p in net.inbound(v).iter().filter(|&&p| members[p]) {
            let pp = prod[p].clone().ok_or_else(inconsistent)?;
            match &incoming {
                None => incoming = Some(pp),
                Some(prev) if *prev != pp => return Err(inconsistent()),
                _ => {}
            }
        }
        let base = if v == input {
            Rational::one()
        } else {
            incoming.ok_or_else(inconsistent)?
        };
        prod[v] = Some(base * &net.layer_at(v).spatial_change);
        for &s in net.outbound(v) {
            if members[s] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.push(s);
                }
            }
        }
    }
    if visited != ids.len() {
        return Err(SubnetError::NotSiso("cycle inside layer set".into()));
    }

    Ok(Boundary {
        input,
        output,
        spatial: prod[output].clone().expect("output visited"),
    })
}

pub(crate) fn subnet_from_mask(
    net: &Network,
    members: &[bool],
) -> Result<SubNetwork, SubnetError> {
    let b = siso_boundary(net, members)?;
    let layer_ids: BTreeSet<String> = (0..net.len())
        .filter(|&i| members[i])
        .map(|i| net.layer_at(i).id.clone())
        .collect();
    let cost = CostVector::sum(
        (0..net.len())
            .filter(|&i| members[i])
            .map(|i| &net.layer_at(i).cost),
    );
    let input = net.layer_at(b.input);
    let output = net.layer_at(b.output);
    Ok(SubNetwork {
        source: net.name().to_string(),
        layer_ids,
        input_layer: input.id.clone(),
        output_layer: output.id.clone(),
        in_channels: input.in_channels,
        out_channels: output.out_channels,
        spatial_change: b.spatial,
        cost,
    })
}

/// Derives the sub-network spanned by `layer_ids`, or explains why the set
/// is not single-input/single-output.
pub fn subnetwork_from_layers<'a, I>(net: &Network, layer_ids: I) -> Result<SubNetwork, SubnetError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut members = vec![false; net.len()];
    let mut any = false;
    for id in layer_ids {
        let i = net
            .index_of(id)
            .ok_or_else(|| SubnetError::UnknownLayer(id.to_string()))?;
        members[i] = true;
        any = true;
    }
    if !any {
        return Err(SubnetError::Empty);
    }
    subnet_from_mask(net, &members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::testnets::*;
    use crate::ir::{Layer, LayerKind};

    #[test]
    fn chain_interval() {
        let net = chain4();
        let s = subnetwork_from_layers(&net, ["b", "c"]).unwrap();
        assert_eq!(s.input_layer, "b");
        assert_eq!(s.output_layer, "c");
        assert_eq!((s.in_channels, s.out_channels), (8, 8));
        assert_eq!(s.spatial_change, Rational::one());
        assert_eq!(s.cost.flops, 500);
        assert_eq!(s.cost.params, 50);
        assert_eq!(s.cost.latency_us["cpu0"], Rational::new(500, 7));
    }

    #[test]
    fn diamond_half_is_not_siso() {
        let net = diamond();
        let err = subnetwork_from_layers(&net, ["l0", "l1"]).unwrap_err();
        assert!(matches!(err, SubnetError::NotSiso(_)), "{err}");
    }

    #[test]
    fn whole_diamond_is_siso() {
        let net = diamond();
        let s = subnetwork_from_layers(&net, ["l0", "l1", "l2", "l3"]).unwrap();
        assert_eq!(s.input_layer, "l0");
        assert_eq!(s.output_layer, "l3");
    }

    #[test]
    fn join_layer_alone_has_two_inputs() {
        let net = diamond();
        assert!(matches!(
            subnetwork_from_layers(&net, ["l3"]),
            Err(SubnetError::NotSiso(_))
        ));
        // Two entries from the same external layer still count twice.
        assert!(matches!(
            subnetwork_from_layers(&net, ["l1", "l2", "l3"]),
            Err(SubnetError::NotSiso(_))
        ));
    }

    #[test]
    fn unknown_and_empty() {
        let net = chain4();
        assert_eq!(
            subnetwork_from_layers(&net, ["zz"]).unwrap_err(),
            SubnetError::UnknownLayer("zz".into())
        );
        assert_eq!(
            subnetwork_from_layers(&net, std::iter::empty()).unwrap_err(),
            SubnetError::Empty
        );
    }

    #[test]
    fn disconnected_set_rejected() {
        let net = chain4();
        assert!(subnetwork_from_layers(&net, ["a", "c"]).is_err());
    }

    #[test]
    fn branch_spatial_disagreement() {
        // Inconsistent network (validate would flag it); the sub-network
        // derivation must still refuse it.
        let d = diamond();
        let mut layers = d.layers().to_vec();
        layers[1] = layers[1].clone().with_spatial(Rational::new(1, 2));
        let net = Network::new(
            "d",
            layers,
            d.edges().iter().cloned(),
            d.inputs().to_vec(),
            d.outputs().to_vec(),
        )
        .unwrap();
        assert!(matches!(
            subnetwork_from_layers(&net, ["l0", "l1", "l2", "l3"]),
            Err(SubnetError::InconsistentSpatial { .. })
        ));
    }

    #[test]
    fn stride_product_along_chain() {
        let net = Network::new(
            "s",
            vec![
                Layer::new("a", LayerKind::Conv, 3, 8).with_spatial(Rational::new(1, 2)),
                Layer::new("b", LayerKind::Pool, 8, 8).with_spatial(Rational::new(1, 2)),
            ],
            [edge("a", "b")],
            ["a".to_string()],
            ["b".to_string()],
        )
        .unwrap();
        let s = subnetwork_from_layers(&net, ["a", "b"]).unwrap();
        assert_eq!(s.spatial_change, Rational::new(1, 4));
        assert_eq!((s.in_channels, s.out_channels), (3, 8));
    }
}
