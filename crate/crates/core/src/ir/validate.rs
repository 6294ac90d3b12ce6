use std::collections::VecDeque;
use std::fmt;

use super::{LayerKind, Network};
use crate::rational::Rational;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    InvalidChannels,
    InvalidSpatial,
    InvalidCost,
    UnknownEdgeEndpoint,
    UnknownGraphLayer,
    Cycle,
    Unreachable,
    DeadEnd,
    MergeChannelMismatch,
    ConcatChannelMismatch,
    EdgeChannelMismatch,
    SpatialMismatch,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::InvalidChannels => "invalid channels",
            Rule::InvalidSpatial => "invalid spatial change",
            Rule::InvalidCost => "invalid cost",
            Rule::UnknownEdgeEndpoint => "unknown edge endpoint",
            Rule::UnknownGraphLayer => "unknown graph input/output",
            Rule::Cycle => "cycle",
            Rule::Unreachable => "unreachable from graph inputs",
            Rule::DeadEnd => "does not reach graph outputs",
            Rule::MergeChannelMismatch => "merge channel mismatch",
            Rule::ConcatChannelMismatch => "concat channel mismatch",
            Rule::EdgeChannelMismatch => "edge channel mismatch",
            Rule::SpatialMismatch => "merge spatial mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: Rule,
    /// Layer id, or `src->dst` for an edge.
    pub subject: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule.as_str(), self.subject)?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// Checks every structural invariant; an empty report means the network is
/// well formed.
///
/// Besides the channel rules for merges this also requires the cumulative
/// spatial ratio to agree on all branches entering a layer, which makes every
/// sub-network of a valid network spatially consistent.
pub fn validate_network(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |rule: Rule, subject: String, detail: String| {
        out.push(Violation {
            rule,
            subject,
            detail,
        })
    };

    for l in net.layers() {
        if l.in_channels == 0 || l.out_channels == 0 {
            push(
                Rule::InvalidChannels,
                l.id.clone(),
                format!("{}→{}", l.in_channels, l.out_channels),
            );
        }
        if !l.spatial_change.is_positive() {
            push(Rule::InvalidSpatial, l.id.clone(), l.spatial_change.to_string());
        }
        for (dev, v) in &l.cost.latency_us {
            if dev.is_empty() {
                push(Rule::InvalidCost, l.id.clone(), "empty device name".into());
            }
            if v.is_negative() {
                push(Rule::InvalidCost, l.id.clone(), format!("latency {dev} = {v}"));
            }
        }
    }

    for (s, d) in net.edges() {
        for end in [s, d] {
            if net.index_of(end).is_none() {
                push(
                    Rule::UnknownEdgeEndpoint,
                    format!("{s}->{d}"),
                    format!("no layer `{end}`"),
                );
            }
        }
    }
    for id in net.inputs().iter().chain(net.outputs()) {
        if net.index_of(id).is_none() {
            push(Rule::UnknownGraphLayer, id.clone(), String::new());
        }
    }

    let n = net.len();
    let topo = net.topo_order();
    if topo.is_none() {
        push(Rule::Cycle, net.name().to_string(), "graph is not acyclic".into());
    }

    let forward = reach(n, (0..n).filter(|&i| net.is_graph_input(i)), |v| net.outbound(v));
    let backward = reach(n, (0..n).filter(|&i| net.is_graph_output(i)), |v| net.inbound(v));
    for i in 0..n {
        let id = &net.layer_at(i).id;
        if !forward[i] {
            push(Rule::Unreachable, id.clone(), String::new());
        }
        if !backward[i] {
            push(Rule::DeadEnd, id.clone(), String::new());
        }
    }

    for v in 0..n {
        let l = net.layer_at(v);
        let preds = net.inbound(v);
        if preds.is_empty() {
            continue;
        }
        let widths: Vec<u32> = preds.iter().map(|&p| net.layer_at(p).out_channels).collect();
        match l.kind {
            LayerKind::Concat => {
                let total: u64 = widths.iter().map(|&w| u64::from(w)).sum();
                if total != u64::from(l.in_channels) {
                    push(
                        Rule::ConcatChannelMismatch,
                        l.id.clone(),
                        format!("inbound {:?} sum {} vs in_channels {}", widths, total, l.in_channels),
                    );
                }
            }
            k if k.is_elementwise_merge() => {
                if widths.iter().any(|&w| w != l.in_channels) {
                    push(
                        Rule::MergeChannelMismatch,
                        l.id.clone(),
                        format!("inbound {:?} vs in_channels {}", widths, l.in_channels),
                    );
                }
            }
            _ => {
                for (&p, &w) in preds.iter().zip(&widths) {
                    if w != l.in_channels {
                        push(
                            Rule::EdgeChannelMismatch,
                            format!("{}->{}", net.layer_at(p).id, l.id),
                            format!("{} vs {}", w, l.in_channels),
                        );
                    }
                }
            }
        }
    }

    if let Some(order) = topo {
        // Cumulative spatial ratio from the graph inputs.
        let mut cum: Vec<Option<Rational>> = vec![None; n];
        for &v in &order {
            let l = net.layer_at(v);
            let mut incoming: Option<&Rational> = None;
            let mut consistent = true;
            for &p in net.inbound(v) {
                let Some(c) = cum[p].as_ref() else { continue };
                match incoming {
                    None => incoming = Some(c),
                    Some(prev) if prev != c => consistent = false,
                    _ => {}
                }
            }
            if !consistent {
                let seen: Vec<String> = net
                    .inbound(v)
                    .iter()
                    .filter_map(|&p| cum[p].as_ref().map(|c| format!("{}:{}", net.layer_at(p).id, c)))
                    .collect();
                push(Rule::SpatialMismatch, l.id.clone(), seen.join(", "));
            }
            let base = incoming.cloned().unwrap_or_else(Rational::one);
            cum[v] = Some(base * &l.spatial_change);
        }
    }

    out
}

fn reach<'a, F>(n: usize, seeds: impl Iterator<Item = usize>, next: F) -> Vec<bool>
where
    F: Fn(usize) -> &'a [usize],
{
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for s in seeds {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        for &u in next(v) {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::testnets::*;
    use crate::ir::{Layer, LayerKind};

    fn rebuild(net: &Network, layers: Vec<Layer>, extra_edges: &[(&str, &str)]) -> Network {
        let mut edges: Vec<_> = net.edges().iter().cloned().collect();
        edges.extend(extra_edges.iter().map(|(a, b)| edge(a, b)));
        Network::new(
            net.name(),
            layers,
            edges,
            net.inputs().to_vec(),
            net.outputs().to_vec(),
        )
        .unwrap()
    }

    fn has(report: &[Violation], needle: &str) -> bool {
        report.iter().any(|v| v.to_string().contains(needle))
    }

    #[test]
    fn chain4_is_clean() {
        assert!(validate_network(&chain4()).is_empty());
        assert!(validate_network(&diamond()).is_empty());
    }

    #[test]
    fn back_edge_is_a_cycle() {
        let c = chain4();
        let bad = rebuild(&c, c.layers().to_vec(), &[("d", "a")]);
        assert!(has(&validate_network(&bad), "cycle"));
    }

    #[test]
    fn add_with_unequal_inbound_widths() {
        let d = diamond();
        let mut layers = d.layers().to_vec();
        layers[2] = Layer::new("l2", LayerKind::Conv, 8, 16);
        let report = validate_network(&rebuild(&d, layers, &[]));
        assert!(has(&report, "merge channel mismatch"), "{report:?}");
    }

    #[test]
    fn concat_requires_sum() {
        let d = diamond();
        let mut layers = d.layers().to_vec();
        layers[3] = Layer::new("l3", LayerKind::Concat, 16, 16);
        assert!(validate_network(&rebuild(&d, layers.clone(), &[])).is_empty());
        layers[3] = Layer::new("l3", LayerKind::Concat, 8, 8);
        assert!(has(&validate_network(&rebuild(&d, layers, &[])), "concat channel mismatch"));
    }

    #[test]
    fn dangling_and_unreachable() {
        let c = chain4();
        let mut layers = c.layers().to_vec();
        layers.push(Layer::new("z", LayerKind::Act, 8, 8));
        let report = validate_network(&rebuild(&c, layers, &[("d", "ghost")]));
        assert!(has(&report, "unknown edge endpoint"));
        assert!(has(&report, "unreachable from graph inputs: z"));
        assert!(has(&report, "does not reach graph outputs: z"));
    }

    #[test]
    fn spatial_branches_must_agree() {
        let d = diamond();
        let mut layers = d.layers().to_vec();
        layers[1] = layers[1].clone().with_spatial(Rational::new(1, 2));
        let report = validate_network(&rebuild(&d, layers.clone(), &[]));
        assert!(has(&report, "merge spatial mismatch"));
        layers[2] = layers[2].clone().with_spatial(Rational::new(1, 2));
        assert!(validate_network(&rebuild(&d, layers, &[])).is_empty());
    }

    #[test]
    fn zero_channels_flagged() {
        let c = chain4();
        let mut layers = c.layers().to_vec();
        layers[0] = Layer::new("a", LayerKind::Conv, 0, 8);
        assert!(has(&validate_network(&rebuild(&c, layers, &[])), "invalid channels"));
    }
}
