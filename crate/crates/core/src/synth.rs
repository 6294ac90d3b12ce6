//! Seeded generators for random networks and pretrained-pool stand-ins.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ir::{CostVector, Layer, LayerKind, Network};
use crate::rational::Rational;

/// Parameters of [`gen_network`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub name: String,
    pub layers: usize,
    /// Probability of an edge between two layers in topological order.
    pub edge_prob: Rational,
    pub channel_palette: Vec<u32>,
    /// Topological positions whose layer halves the spatial size (merges
    /// ignore this).
    pub stride_positions: Vec<usize>,
    pub seed: u64,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            name: "net".into(),
            layers: 8,
            edge_prob: Rational::new(3, 10),
            channel_palette: vec![8, 16, 32],
            stride_positions: Vec::new(),
            seed: 0,
        }
    }
}

const PLAIN: [LayerKind; 6] = [
    LayerKind::Conv,
    LayerKind::Conv,
    LayerKind::Dwconv,
    LayerKind::Act,
    LayerKind::Bn,
    LayerKind::Dense,
];
const MERGES: [LayerKind; 3] = [LayerKind::Add, LayerKind::Mul, LayerKind::Concat];

fn keeps_width(kind: LayerKind) -> bool {
    matches!(
        kind,
        LayerKind::Dwconv | LayerKind::Act | LayerKind::Bn | LayerKind::Pool | LayerKind::Other
    )
}

fn layer_cost<R: Rng + ?Sized>(rng: &mut R, cin: u32, cout: u32, spatial: &Rational) -> CostVector {
    let params = u64::from(cin) * u64::from(cout);
    let area = rng.gen_range(1..=16u64);
    let flops = spatial.floor_scale_u64(2 * params * area).max(1);
    let speed = rng.gen_range(500..=2000i64);
    CostVector::new(flops, params).with_latency("cpu0", Rational::from(flops) / Rational::from(speed))
}

/// A random DAG over a random topological order.
///
/// Position 0 is the only graph input; every later layer has at least one
/// predecessor; layers without successors are graph outputs. Layers with
/// several predecessors become merges. Branches entering an add/mul with a
/// width or cumulative spatial ratio different from the earliest branch go
/// through an inserted `other` adapter layer; concat branches only need the
/// spatial fix. Layer ids are shuffled so that id order differs from
/// topological order.
pub fn gen_network(spec: &NetSpec) -> Network {
    assert!(spec.layers >= 1, "at least one layer");
    assert!(!spec.channel_palette.is_empty(), "empty channel palette");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.layers;
    let p = spec.edge_prob.to_f64().clamp(0.0, 1.0);
    let w = n.saturating_sub(1).to_string().len().max(2);
    let mut names: Vec<String> = (0..n).map(|i| format!("n{i:0w$}")).collect();
    names.shuffle(&mut rng);

    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut has_succ = vec![false; n];
    for j in 1..n {
        for i in 0..j {
            if rng.gen_bool(p) {
                preds[j].push(i);
            }
        }
        if preds[j].is_empty() {
            preds[j].push(rng.gen_range(0..j));
        }
        for &i in &preds[j] {
            has_succ[i] = true;
        }
    }

    let palette = &spec.channel_palette;
    let mut layers: Vec<Layer> = Vec::new();
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut out_ch = vec![0u32; n];
    let mut cum: Vec<Rational> = vec![Rational::one(); n];
    for j in 0..n {
        let id = names[j].clone();
        let (kind, cin, spatial) = if preds[j].len() >= 2 {
            let kind = *MERGES.choose(&mut rng).expect("non-empty");
            let first = preds[j][0];
            let mut total = 0u32;
            for &i in &preds[j] {
                let need_w = kind != LayerKind::Concat && out_ch[i] != out_ch[first];
                let need_s = cum[i] != cum[first];
                let src = if need_w || need_s {
                    let aid = format!("{}~{}", names[i], id);
                    let to = if kind == LayerKind::Concat { out_ch[i] } else { out_ch[first] };
                    let ratio = &cum[first] / &cum[i];
                    let cost = layer_cost(&mut rng, out_ch[i], to, &ratio);
                    layers.push(
                        Layer::new(aid.clone(), LayerKind::Other, out_ch[i], to)
                            .with_spatial(ratio)
                            .with_cost(cost),
                    );
                    edges.push((names[i].clone(), aid.clone()));
                    aid
                } else {
                    names[i].clone()
                };
                total += if kind == LayerKind::Concat { out_ch[i] } else { 0 };
                edges.push((src, id.clone()));
            }
            let cin = if kind == LayerKind::Concat { total } else { out_ch[first] };
            cum[j] = cum[first].clone();
            (kind, cin, Rational::one())
        } else {
            let kind = *PLAIN.choose(&mut rng).expect("non-empty");
            let cin = match preds[j].first() {
                Some(&i) => {
                    edges.push((names[i].clone(), id.clone()));
                    cum[j] = cum[i].clone();
                    out_ch[i]
                }
                None => *palette.choose(&mut rng).expect("non-empty"),
            };
            let spatial = if spec.stride_positions.contains(&j) {
                Rational::new(1, 2)
            } else {
                Rational::one()
            };
            cum[j] = &cum[j] * &spatial;
            (kind, cin, spatial)
        };
        let cout = if keeps_width(kind) || kind.is_elementwise_merge() || kind == LayerKind::Concat {
            cin
        } else {
            *palette.choose(&mut rng).expect("non-empty")
        };
        out_ch[j] = cout;
        let cost = layer_cost(&mut rng, cin, cout, &spatial);
        layers.push(Layer::new(id, kind, cin, cout).with_spatial(spatial).with_cost(cost));
    }

    let outputs: Vec<String> = (0..n).filter(|&i| !has_succ[i]).map(|i| names[i].clone()).collect();
    Network::new(spec.name.clone(), layers, edges, [names[0].clone()], outputs)
        .expect("generated ids are distinct")
}

/// A random DAG of exactly `layers` width-8 conv layers (add where
/// several edges meet) and no strides, so no adapters are needed.
///
/// Unlike [`gen_network`], a later layer that draws no predecessor becomes
/// an extra graph input with probability one half, giving multi-input and
/// disconnected graphs as well.
pub fn gen_dag(name: &str, layers: usize, edge_prob: &Rational, seed: u64) -> Network {
    assert!(layers >= 1, "at least one layer");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = edge_prob.to_f64().clamp(0.0, 1.0);
    let w = layers.saturating_sub(1).to_string().len().max(2);
    let mut names: Vec<String> = (0..layers).map(|i| format!("v{i:0w$}")).collect();
    names.shuffle(&mut rng);

    let mut edges = Vec::new();
    let mut inputs = vec![names[0].clone()];
    let mut indeg = vec![0usize; layers];
    let mut has_succ = vec![false; layers];
    for j in 1..layers {
        let mut preds: Vec<usize> = (0..j).filter(|_| rng.gen_bool(p)).collect();
        if preds.is_empty() {
            if rng.gen_bool(0.5) {
                inputs.push(names[j].clone());
                continue;
            }
            preds.push(rng.gen_range(0..j));
        }
        for &i in &preds {
            edges.push((names[i].clone(), names[j].clone()));
            has_succ[i] = true;
        }
        indeg[j] = preds.len();
    }
    let net_layers = (0..layers)
        .map(|j| {
            let kind = if indeg[j] >= 2 { LayerKind::Add } else { LayerKind::Conv };
            let flops = rng.gen_range(1..=1000u64);
            Layer::new(names[j].clone(), kind, 8, 8).with_cost(CostVector::new(flops, flops / 10))
        })
        .collect();
    let outputs: Vec<String> = (0..layers).filter(|&i| !has_succ[i]).map(|i| names[i].clone()).collect();
    Network::new(name, net_layers, edges, inputs, outputs).expect("generated ids are distinct")
}

/// A chain `l0 → l1 → …` of conv layers with constant width.
pub fn chain(name: &str, length: usize, channels: u32) -> Network {
    let w = length.saturating_sub(1).to_string().len();
    let ids: Vec<String> = (0..length).map(|i| format!("l{i:0w$}")).collect();
    let layers = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let flops = 100 * (i as u64 + 1);
            Layer::new(id.clone(), LayerKind::Conv, channels, channels).with_cost(
                CostVector::new(flops, flops / 10).with_latency("cpu0", Rational::new(flops as i64, 7)),
            )
        })
        .collect();
    let edges = ids.windows(2).map(|p| (p[0].clone(), p[1].clone()));
    Network::new(
        name,
        layers,
        edges,
        ids.first().cloned(),
        ids.last().cloned(),
    )
    .expect("distinct ids")
}

fn scale_cost(c: &CostVector, s: u32) -> CostVector {
    let s2 = u64::from(s) * u64::from(s);
    CostVector {
        flops: c.flops.saturating_mul(s2),
        params: c.params.saturating_mul(s2),
        latency_us: c
            .latency_us
            .iter()
            .map(|(k, v)| (k.clone(), v * &Rational::from(s2)))
            .collect(),
    }
}

/// Every channel count of `base` multiplied by `s`, costs by `s²`.
pub fn scale_network(base: &Network, s: u32, name: &str) -> Network {
    let layers = base
        .layers()
        .iter()
        .map(|l| {
            let mut l = l.clone();
            l.in_channels *= s;
            l.out_channels *= s;
            l.cost = scale_cost(&l.cost, s);
            l
        })
        .collect();
    Network::new(
        name,
        layers,
        base.edges().iter().cloned(),
        base.inputs().to_vec(),
        base.outputs().to_vec(),
    )
    .expect("ids unchanged")
}

/// Inserts a width-preserving layer right after `after`, taking over all of
/// its outbound edges (and its graph-output role).
fn deepen(net: &Network, after: &str, new_id: &str, cost: CostVector) -> Network {
    let src = net.layer(after).expect("existing layer");
    let mut layers = net.layers().to_vec();
    layers.push(Layer::new(new_id, LayerKind::Conv, src.out_channels, src.out_channels).with_cost(cost));
    let mut edges: Vec<(String, String)> = net
        .edges()
        .iter()
        .map(|(s, d)| {
            if s == after {
                (new_id.to_string(), d.clone())
            } else {
                (s.clone(), d.clone())
            }
        })
        .collect();
    edges.push((after.to_string(), new_id.to_string()));
    let outputs = net
        .outputs()
        .iter()
        .map(|o| if o == after { new_id.to_string() } else { o.clone() })
        .collect::<Vec<_>>();
    Network::new(net.name(), layers, edges, net.inputs().to_vec(), outputs).expect("fresh id")
}

/// `variants` networks derived from `base`: channels scaled by a factor
/// drawn from `scales`, then up to two extra width-preserving layers
/// inserted at random. Each variant contains scaled copies of every
/// sub-network of `base` that avoids the inserted layers, so compatible
/// blocks always exist for factors ≥ 1.
pub fn gen_pool(base: &Network, variants: usize, scales: &[u32], seed: u64) -> Vec<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales = if scales.is_empty() { &[1u32][..] } else { scales };
    (0..variants)
        .map(|k| {
            let s = *scales.choose(&mut rng).expect("non-empty");
            let name = format!("{}-v{k}", base.name());
            let mut net = scale_network(base, s, &name);
            let extra = rng.gen_range(0..=2);
            for e in 0..extra {
                let at = net.layers()[rng.gen_range(0..net.len())].id.clone();
                let c = net.layer(&at).expect("exists").out_channels;
                let cost = layer_cost(&mut rng, c, c, &Rational::one());
                net = deepen(&net, &at, &format!("x{e}"), cost);
            }
            net
        })
        .collect()
}
