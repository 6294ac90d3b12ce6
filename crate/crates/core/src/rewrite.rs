//! Splicing alternatives into the teacher graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::house::{effective_subnet, masked_layers, Alternative, MaskError, ModelHouse, Origin};
use crate::ir::{subnetwork_from_layers, validate_network, Layer, Network, NetworkError, SubNetwork};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RewriteError {
    #[error("boundary mismatch for `{alt}`: {detail}")]
    BoundaryMismatch { alt: String, detail: String },
    #[error("target of `{alt}` is not intact: {detail}")]
    TargetNotIntact { alt: String, detail: String },
    #[error("unknown alternative `{0}`")]
    UnknownAlternative(String),
    #[error("alternatives `{0}` and `{1}` replace overlapping regions")]
    Overlap(String, String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("rewritten network is invalid: {0}")]
    InvalidResult(String),
}

/// Where a student layer came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerOrigin {
    pub alternative: String,
    pub origin: Origin,
    pub source_network: String,
}

/// Student layer id to the alternative that put it there. Layers absent
/// from the map are the teacher's own.
pub type Provenance = BTreeMap<String, LayerOrigin>;

#[derive(Debug, Clone, PartialEq)]
pub struct Student {
    pub network: Network,
    pub provenance: Provenance,
}

fn mismatch(alt: &Alternative, detail: String) -> RewriteError {
    RewriteError::BoundaryMismatch {
        alt: alt.id.clone(),
        detail,
    }
}

/// Smallest `k` such that no layer id in `net` starts with `alt<k>/`.
fn free_prefix(net: &Network) -> String {
    (0..)
        .map(|k| format!("alt{k}/"))
        .find(|p| !net.layers().iter().any(|l| l.id.starts_with(p.as_str())))
        .expect("unbounded range")
}

/// Replaces the layers of `target` in `net` with the (masked) layers of
/// `alt`. Returns the new network and the ids given to the inserted layers.
///
/// Inserted layers are namespaced `alt<k>/<id>` with the first unused `k`,
/// except for identity alternatives, whose layers are exactly the ones being
/// removed and keep their ids.
pub fn replace_subnetwork(
    net: &Network,
    target: &SubNetwork,
    alt: &Alternative,
) -> Result<(Network, Vec<String>), RewriteError> {
    let current = subnetwork_from_layers(net, target.layer_ids.iter().map(String::as_str)).map_err(|e| {
        RewriteError::TargetNotIntact {
            alt: alt.id.clone(),
            detail: e.to_string(),
        }
    })?;
    if current.input_layer != target.input_layer
        || current.output_layer != target.output_layer
        || current.in_channels != target.in_channels
        || current.out_channels != target.out_channels
        || current.spatial_change != target.spatial_change
    {
        return Err(RewriteError::TargetNotIntact {
            alt: alt.id.clone(),
            detail: "boundary differs from the recorded target".into(),
        });
    }

    let eff = effective_subnet(alt)?;
    if eff.spatial_change != target.spatial_change {
        return Err(mismatch(
            alt,
            format!("spatial {} vs {}", eff.spatial_change, target.spatial_change),
        ));
    }
    if eff.in_channels != target.in_channels || eff.out_channels != target.out_channels {
        return Err(mismatch(
            alt,
            format!(
                "channels {}→{} vs {}→{}",
                eff.in_channels, eff.out_channels, target.in_channels, target.out_channels
            ),
        ));
    }

    let prefix = if alt.origin == Origin::Teacher {
        String::new()
    } else {
        free_prefix(net)
    };
    let rename = |id: &str| format!("{prefix}{id}");
    let new_in = rename(&alt.subnet.input_layer);
    let new_out = rename(&alt.subnet.output_layer);
    let inserted: Vec<Layer> = masked_layers(alt)?
        .into_iter()
        .map(|mut l| {
            l.id = rename(&l.id);
            l
        })
        .collect();
    let inserted_ids: Vec<String> = inserted.iter().map(|l| l.id.clone()).collect();

    let members = &target.layer_ids;
    let mut layers: Vec<Layer> = net
        .layers()
        .iter()
        .filter(|l| !members.contains(&l.id))
        .cloned()
        .collect();
    layers.extend(inserted);

    let mut edges: Vec<(String, String)> = Vec::new();
    for (s, d) in net.edges() {
        match (members.contains(s), members.contains(d)) {
            (false, false) => edges.push((s.clone(), d.clone())),
            (false, true) => edges.push((s.clone(), new_in.clone())),
            (true, false) => edges.push((new_out.clone(), d.clone())),
            (true, true) => {}
        }
    }
    edges.extend(alt.edges.iter().map(|(s, d)| (rename(s), rename(d))));

    let swap = |ids: &[String], old: &str, new: &str| -> Vec<String> {
        ids.iter()
            .map(|i| if i == old { new.to_string() } else { i.clone() })
            .collect()
    };
    let inputs = swap(net.inputs(), &target.input_layer, &new_in);
    let outputs = swap(net.outputs(), &target.output_layer, &new_out);

    let out = Network::new(net.name(), layers, edges, inputs, outputs).map_err(|e| match e {
        NetworkError::DuplicateLayer(id) => RewriteError::InvalidResult(format!("duplicate layer `{id}`")),
    })?;
    let report = validate_network(&out);
    if !report.is_empty() {
        let msgs: Vec<String> = report.iter().map(ToString::to_string).collect();
        return Err(RewriteError::InvalidResult(msgs.join("; ")));
    }
    Ok((out, inserted_ids))
}

/// The student induced by `plan`. Members are applied in the teacher's
/// topological order of their targets' input layers.
pub fn apply_plan(house: &ModelHouse, plan: &BTreeSet<String>) -> Result<Student, RewriteError> {
    let topo = house.teacher.topo_order().unwrap_or_default();
    let mut position = vec![0usize; house.teacher.len()];
    for (p, &v) in topo.iter().enumerate() {
        position[v] = p;
    }

    let mut steps: Vec<(usize, &Alternative, &SubNetwork)> = Vec::new();
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for id in plan {
        let alt = house
            .alternative(id)
            .ok_or_else(|| RewriteError::UnknownAlternative(id.clone()))?;
        let target = house.target(alt).ok_or_else(|| RewriteError::TargetNotIntact {
            alt: id.clone(),
            detail: format!("unknown target `{}`", alt.target_id),
        })?;
        for l in &target.layer_ids {
            if let Some(prev) = owner.insert(l, id) {
                return Err(RewriteError::Overlap(prev.to_string(), id.clone()));
            }
        }
        let pos = house
            .teacher
            .index_of(&target.input_layer)
            .map_or(usize::MAX, |i| position[i]);
        steps.push((pos, alt, target));
    }
    steps.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));

    let mut net = house.teacher.clone();
    let mut provenance = Provenance::new();
    for (_, alt, target) in steps {
        let (next, ids) = replace_subnetwork(&net, target, alt)?;
        for id in ids {
            provenance.insert(
                id,
                LayerOrigin {
                    alternative: alt.id.clone(),
                    origin: alt.origin,
                    source_network: alt.subnet.source.clone(),
                },
            );
        }
        net = next;
    }
    Ok(Student {
        network: net,
        provenance,
    })
}

const PALETTE: [&str; 8] = [
    "#8dd3c7", "#fdb462", "#bebada", "#fb8072", "#80b1d3", "#b3de69", "#fccde5", "#ffffb3",
];

fn quote(s: &str) -> String {
    format!(
        "\"{}\"",
        s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
    )
}

/// Graphviz text for `net`. With a provenance map, inserted layers are
/// filled with one colour per source network and carry `origin` and
/// `alternative` attributes.
pub fn render_dot(net: &Network, provenance: Option<&Provenance>) -> String {
    let sources: BTreeSet<&str> = provenance
        .map(|p| p.values().map(|o| o.source_network.as_str()).collect())
        .unwrap_or_default();
    let colour = |src: &str| {
        let k = sources.iter().position(|s| *s == src).unwrap_or(0);
        PALETTE[k % PALETTE.len()]
    };

    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", quote(net.name()));
    let _ = writeln!(out, "  rankdir=TB;");
    let _ = writeln!(out, "  node [shape=box, fontname=\"monospace\"];");
    for l in net.layers() {
        let mut label = format!("{}\n{} {}→{}", l.id, l.kind.as_str(), l.in_channels, l.out_channels);
        if l.spatial_change != crate::rational::Rational::one() {
            let _ = write!(label, " ×{}", l.spatial_change);
        }
        let mut attrs = vec![format!("label={}", quote(&label))];
        if let Some(o) = provenance.and_then(|p| p.get(&l.id)) {
            attrs.push("style=filled".into());
            attrs.push(format!("fillcolor={}", quote(colour(&o.source_network))));
            attrs.push(format!("origin={}", quote(&o.source_network)));
            attrs.push(format!("alternative={}", quote(&o.alternative)));
        }
        let _ = writeln!(out, "  {} [{}];", quote(&l.id), attrs.join(", "));
    }
    for (s, d) in net.edges() {
        let _ = writeln!(out, "  {} -> {};", quote(s), quote(d));
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enumerate::brute_force_enumerate;
    use crate::house::fragment_of;
    use crate::ir::testnets::*;
    use crate::ir::{serialize_network, CostVector, LayerKind};

    fn alt_from(net: &Network, ids: &[&str], target_id: &str, origin: Origin) -> Alternative {
        let subnet = subnetwork_from_layers(net, ids.iter().copied()).unwrap();
        let (layers, edges) = fragment_of(net, &subnet);
        Alternative {
            id: "A0".into(),
            subnet,
            origin,
            mask: None,
            target_id: target_id.into(),
            layers,
            edges,
            pruning: None,
            parent: None,
        }
    }

    fn pair_net() -> Network {
        Network::new(
            "pair",
            vec![
                Layer::new("p", LayerKind::Conv, 8, 8).with_cost(CostVector::new(7, 1)),
                Layer::new("q", LayerKind::Conv, 8, 8).with_cost(CostVector::new(9, 1)),
            ],
            [edge("p", "q")],
            ["p".to_string()],
            ["q".to_string()],
        )
        .unwrap()
    }

    #[test]
    fn identity_replacement_keeps_bytes() {
        let net = chain4();
        let target = subnetwork_from_layers(&net, ["b", "c"]).unwrap();
        let alt = alt_from(&net, &["b", "c"], "T0", Origin::Teacher);
        let (out, ids) = replace_subnetwork(&net, &target, &alt).unwrap();
        assert_eq!(serialize_network(&out), serialize_network(&net));
        assert_eq!(ids, ["b", "c"]);
    }

    #[test]
    fn two_layer_splice() {
        let net = chain4();
        let target = subnetwork_from_layers(&net, ["b", "c"]).unwrap();
        let alt = alt_from(&pair_net(), &["p", "q"], "T0", Origin::Pretrained);
        let (out, _) = replace_subnetwork(&net, &target, &alt).unwrap();
        assert_eq!(out.len(), 4);
        assert!(validate_network(&out).is_empty());
        let ids: Vec<&str> = out.layers().iter().map(|l| l.id.as_str()).collect();
        assert_eq!(ids, ["a", "alt0/p", "alt0/q", "d"]);
        assert!(out.edges().contains(&edge("a", "alt0/p")));
        assert!(out.edges().contains(&edge("alt0/q", "d")));
    }

    #[test]
    fn repeated_use_gets_fresh_namespace() {
        let net = chain4();
        let alt = alt_from(&pair_net(), &["p"], "T0", Origin::Pretrained);
        let t1 = subnetwork_from_layers(&net, ["b"]).unwrap();
        let (once, _) = replace_subnetwork(&net, &t1, &alt).unwrap();
        let t2 = subnetwork_from_layers(&once, ["c"]).unwrap();
        let (twice, ids) = replace_subnetwork(&once, &t2, &alt).unwrap();
        assert_eq!(ids, ["alt1/p"]);
        assert!(validate_network(&twice).is_empty());
    }

    #[test]
    fn diamond_to_single_layer() {
        let net = diamond();
        let all: Vec<&str> = net.layers().iter().map(|l| l.id.as_str()).collect();
        let target = subnetwork_from_layers(&net, all).unwrap();
        let single = Network::new(
            "one",
            vec![Layer::new("z", LayerKind::Conv, target.in_channels, target.out_channels)],
            [],
            ["z".to_string()],
            ["z".to_string()],
        )
        .unwrap();
        let alt = alt_from(&single, &["z"], "T0", Origin::Pretrained);
        let (out, _) = replace_subnetwork(&net, &target, &alt).unwrap();
        assert!(validate_network(&out).is_empty());
        assert_eq!(out.len(), 1);
        // The whole result is itself the only SISO region.
        assert_eq!(brute_force_enumerate(&out, 14).unwrap().len(), 1);
    }

    #[test]
    fn boundary_errors() {
        let net = chain4();
        let target = subnetwork_from_layers(&net, ["b", "c"]).unwrap();
        let mut alt = alt_from(&pair_net(), &["p", "q"], "T0", Origin::Pretrained);
        alt.subnet.out_channels = 16;
        assert!(matches!(
            replace_subnetwork(&net, &target, &alt),
            Err(RewriteError::BoundaryMismatch { .. })
        ));
        let mut moved = target.clone();
        moved.layer_ids.insert("zz".into());
        assert!(matches!(
            replace_subnetwork(&net, &moved, &alt),
            Err(RewriteError::TargetNotIntact { .. })
        ));
    }

    #[test]
    fn dot_output() {
        let dot = render_dot(&chain4(), None);
        assert_eq!(dot.matches(" [label=").count(), 4);
        assert_eq!(dot.matches(" -> ").count(), 3);
        assert_eq!(dot, render_dot(&chain4(), None));

        let mut prov = Provenance::new();
        prov.insert(
            "b".into(),
            LayerOrigin {
                alternative: "A3".into(),
                origin: Origin::Pretrained,
                source_network: "resnet".into(),
            },
        );
        let dot = render_dot(&chain4(), Some(&prov));
        let line = dot.lines().find(|l| l.trim_start().starts_with("\"b\"")).unwrap();
        assert!(line.contains("origin=\"resnet\""), "{line}");
        assert!(line.contains("fillcolor="));
    }
}
