//! The model house: sampled teacher sub-networks, the alternatives that may
//! replace them, and the map from each alternative to its target.

mod json;
mod mask;

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::enumerate::{eligible_starts, pair_to_subnet, traverse, ClosureRule};
use crate::ir::{subnetwork_from_layers, validate_network, Layer, Network, SubNetwork};
use crate::rational::Rational;

pub use json::{parse_house, serialize_house};
pub use mask::{
    apply_mask, effective_subnet, masked_layers, ChannelMask, ChannelScores, MaskError, ScoreTable,
};

/// Start layers tried by [`subnet_sampling`] before giving up.
pub const SAMPLING_RETRIES: usize = 32;
/// Construction attempts allowed per requested sub-network.
pub const ATTEMPTS_PER_ITEM: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HouseError {
    #[error("invalid house parameters: {0}")]
    InvalidParams(String),
    #[error("n_p > 0 but no pretrained networks were given")]
    EmptyPretrainedSet,
    #[error("no sub-network found in `{0}`")]
    NoSubnetFound(String),
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("malformed house document: {0}")]
    Format(String),
    #[error("inconsistent house: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Teacher,
    Pretrained,
    Expanded,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Teacher => "teacher",
            Origin::Pretrained => "pretrained",
            Origin::Expanded => "expanded",
        }
    }
}

/// A block that may replace its target teacher sub-network.
#[derive(Debug, Clone, PartialEq)]
pub struct Alternative {
    pub id: String,
    /// Shape and cost summary, before masking.
    pub subnet: SubNetwork,
    pub origin: Origin,
    pub mask: Option<ChannelMask>,
    pub target_id: String,
    /// Member layers as they appear in the source network (after pruning
    /// for expanded alternatives).
    pub layers: Vec<Layer>,
    /// Edges among `layers`.
    pub edges: Vec<(String, String)>,
    /// Channels of the parent's boundaries kept by pruning.
    pub pruning: Option<ChannelMask>,
    /// Alternative this one was pruned from.
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HouseParams {
    pub n_t: usize,
    pub n_p: usize,
    pub n_expand: usize,
    pub r: Rational,
    pub min_size: usize,
    pub seed: u64,
}

impl Default for HouseParams {
    fn default() -> Self {
        HouseParams {
            n_t: 100,
            n_p: 200,
            n_expand: 200,
            r: Rational::new(3, 10),
            min_size: 1,
            seed: 0,
        }
    }
}

impl HouseParams {
    fn check(&self) -> Result<(), HouseError> {
        if !self.r.is_positive() || self.r > Rational::one() {
            return Err(HouseError::InvalidParams(format!("r = {} is outside (0, 1]", self.r)));
        }
        if self.min_size == 0 {
            return Err(HouseError::InvalidParams("min_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelHouse {
    pub teacher: Network,
    pub teacher_subnets: BTreeMap<String, SubNetwork>,
    pub alternatives: BTreeMap<String, Alternative>,
    pub params: HouseParams,
}

impl ModelHouse {
    pub fn alternative(&self, id: &str) -> Option<&Alternative> {
        self.alternatives.get(id)
    }

    /// The teacher sub-network `alt` maps to.
    pub fn target(&self, alt: &Alternative) -> Option<&SubNetwork> {
        self.teacher_subnets.get(&alt.target_id)
    }

    pub fn count_by_origin(&self, origin: Origin) -> usize {
        self.alternatives.values().filter(|a| a.origin == origin).count()
    }

    /// Same house restricted to identity alternatives.
    pub fn teacher_only(&self) -> ModelHouse {
        ModelHouse {
            alternatives: self
                .alternatives
                .iter()
                .filter(|(_, a)| a.origin == Origin::Teacher)
                .map(|(k, a)| (k.clone(), a.clone()))
                .collect(),
            ..self.clone()
        }
    }

    /// Every structural invariant of the house that does not hold.
    pub fn check(&self) -> Vec<String> {
        check_house(self)
    }
}

/// `alt` can stand in for `target`: same spatial change and at least as many
/// channels on both boundaries.
pub fn is_compatible(alt: &SubNetwork, target: &SubNetwork) -> bool {
    alt.spatial_change == target.spatial_change
        && alt.in_channels >= target.in_channels
        && alt.out_channels >= target.out_channels
}

fn sample_from_start<R: Rng + ?Sized>(
    net: &Network,
    start: usize,
    r: &Rational,
    min_size: usize,
    rng: &mut R,
) -> Option<SubNetwork> {
    let pairs = traverse(net, start, ClosureRule::Strengthened, 0);
    let keep = r.ceil_mul(pairs.len()).min(pairs.len());
    let candidates: Vec<_> = pairs[..keep]
        .iter()
        .filter(|p| p.member_ids.len() >= min_size)
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let pick = candidates[rng.gen_range(0..candidates.len())];
    Some(pair_to_subnet(net, pick).expect("closure pairs are single-input/single-output"))
}

/// Draws one sub-network: a uniformly random eligible start, the modified
/// DFS from it, and a uniform pick among the first `⌈r·m⌉` of the `m`
/// closure pairs that have at least `min_size` layers.
pub fn subnet_sampling<R: Rng + ?Sized>(
    net: &Network,
    r: &Rational,
    min_size: usize,
    rng: &mut R,
) -> Result<SubNetwork, HouseError> {
    let starts = eligible_starts(net);
    if starts.is_empty() {
        return Err(HouseError::NoSubnetFound(net.name().to_string()));
    }
    for _ in 0..SAMPLING_RETRIES {
        let start = starts[rng.gen_range(0..starts.len())];
        if let Some(s) = sample_from_start(net, start, r, min_size, rng) {
            return Ok(s);
        }
    }
    Err(HouseError::NoSubnetFound(net.name().to_string()))
}

/// [`subnet_sampling`] with a fixed start layer and a single attempt.
pub fn subnet_sampling_from<R: Rng + ?Sized>(
    net: &Network,
    start: &str,
    r: &Rational,
    min_size: usize,
    rng: &mut R,
) -> Result<SubNetwork, HouseError> {
    let i = net
        .index_of(start)
        .ok_or_else(|| HouseError::UnknownLayer(start.to_string()))?;
    if net.in_connections(i) > 1 {
        return Err(HouseError::NoSubnetFound(net.name().to_string()));
    }
    sample_from_start(net, i, r, min_size, rng)
        .ok_or_else(|| HouseError::NoSubnetFound(net.name().to_string()))
}

/// Member layers of `sub` and the edges among them.
pub(crate) fn fragment_of(net: &Network, sub: &SubNetwork) -> (Vec<Layer>, Vec<(String, String)>) {
    let layers = net
        .layers()
        .iter()
        .filter(|l| sub.layer_ids.contains(&l.id))
        .cloned()
        .collect();
    let edges = net
        .edges()
        .iter()
        .filter(|(s, d)| sub.layer_ids.contains(s) && sub.layer_ids.contains(d))
        .cloned()
        .collect();
    (layers, edges)
}

/// The alternative's layers as a standalone network whose only input is the
/// alternative's input layer and only output its output layer.
pub fn fragment_network(alt: &Alternative, layers: Vec<Layer>) -> Result<Network, HouseError> {
    Network::new(
        alt.subnet.source.clone(),
        layers,
        alt.edges.iter().cloned(),
        [alt.subnet.input_layer.clone()],
        [alt.subnet.output_layer.clone()],
    )
    .map_err(|e| HouseError::Invalid(format!("alternative `{}`: {e}", alt.id)))
}

fn boundary_mask(sub: &SubNetwork, target: &SubNetwork) -> Option<ChannelMask> {
    if sub.in_channels == target.in_channels && sub.out_channels == target.out_channels {
        return None;
    }
    Some(
        ChannelMask::keep_first(
            sub.in_channels,
            target.in_channels,
            sub.out_channels,
            target.out_channels,
        )
        .expect("target widths are positive"),
    )
}

pub(crate) fn alt_id(k: usize) -> String {
    format!("A{k:04}")
}

pub(crate) fn subnet_id(k: usize) -> String {
    format!("T{k:04}")
}

/// Gives every pool network a name distinct from the teacher's and from
/// each other, so alternatives can be traced back to their source.
fn distinct_names(teacher: &Network, pool: &[Network]) -> Vec<Network> {
    let mut taken: BTreeSet<String> = BTreeSet::from([teacher.name().to_string()]);
    pool.iter()
        .map(|p| {
            let mut name = p.name().to_string();
            let mut k = 1;
            while taken.contains(&name) {
                name = format!("{}#{k}", p.name());
                k += 1;
            }
            taken.insert(name.clone());
            if name == p.name() {
                p.clone()
            } else {
                p.renamed(name)
            }
        })
        .collect()
}

/// Builds Ω(T) and the pretrained alternatives.
///
/// Teacher sub-networks are sampled until `n_t` distinct member sets are
/// found or `50·n_t` draws are spent. Each becomes its own identity
/// alternative. Pretrained blocks are then drawn against random targets
/// until `n_p` compatible ones are found or `50·n_p` draws are spent;
/// blocks wider than their target get a keep-first mask. Expansion is a
/// separate step, see [`expand`].
pub fn construct<R: Rng + ?Sized>(
    teacher: &Network,
    pretrained: &[Network],
    params: &HouseParams,
    rng: &mut R,
) -> Result<ModelHouse, HouseError> {
    params.check()?;
    if params.n_p > 0 && pretrained.is_empty() {
        return Err(HouseError::EmptyPretrainedSet);
    }

    let mut omega_t: Vec<SubNetwork> = Vec::new();
    let mut seen: BTreeSet<BTreeSet<String>> = BTreeSet::new();
    for _ in 0..params.n_t.saturating_mul(ATTEMPTS_PER_ITEM) {
        if omega_t.len() >= params.n_t {
            break;
        }
        match subnet_sampling(teacher, &params.r, params.min_size, rng) {
            Ok(s) => {
                if seen.insert(s.layer_ids.clone()) {
                    omega_t.push(s);
                }
            }
            Err(e) => {
                warn!("{e}");
                break;
            }
        }
    }
    if omega_t.len() < params.n_t {
        warn!(
            "sampled {} of {} requested teacher sub-networks",
            omega_t.len(),
            params.n_t
        );
    }

    let mut teacher_subnets = BTreeMap::new();
    let mut alternatives = BTreeMap::new();
    for (k, s) in omega_t.iter().enumerate() {
        let tid = subnet_id(k);
        let (layers, edges) = fragment_of(teacher, s);
        let aid = alt_id(k);
        alternatives.insert(
            aid.clone(),
            Alternative {
                id: aid,
                subnet: s.clone(),
                origin: Origin::Teacher,
                mask: None,
                target_id: tid.clone(),
                layers,
                edges,
                pruning: None,
                parent: None,
            },
        );
        teacher_subnets.insert(tid, s.clone());
    }

    let pool = distinct_names(teacher, pretrained);
    let mut harvested: BTreeSet<(String, BTreeSet<String>, String)> = BTreeSet::new();
    let mut n_pretrained = 0usize;
    if !omega_t.is_empty() && !pool.is_empty() {
        for _ in 0..params.n_p.saturating_mul(ATTEMPTS_PER_ITEM) {
            if n_pretrained >= params.n_p {
                break;
            }
            let k = rng.gen_range(0..omega_t.len());
            let target = &omega_t[k];
            let p = &pool[rng.gen_range(0..pool.len())];
            let Ok(cand) = subnet_sampling(p, &params.r, params.min_size, rng) else {
                continue;
            };
            if !is_compatible(&cand, target) {
                continue;
            }
            let tid = subnet_id(k);
            let key = (cand.source.clone(), cand.layer_ids.clone(), tid.clone());
            if !harvested.insert(key) {
                continue;
            }
            let (layers, edges) = fragment_of(p, &cand);
            let aid = alt_id(alternatives.len());
            alternatives.insert(
                aid.clone(),
                Alternative {
                    id: aid,
                    mask: boundary_mask(&cand, target),
                    subnet: cand,
                    origin: Origin::Pretrained,
                    target_id: tid,
                    layers,
                    edges,
                    pruning: None,
                    parent: None,
                },
            );
            n_pretrained += 1;
        }
    }
    if n_pretrained < params.n_p {
        warn!("found {n_pretrained} of {} requested pretrained alternatives", params.n_p);
    }

    Ok(ModelHouse {
        teacher: teacher.clone(),
        teacher_subnets,
        alternatives,
        params: params.clone(),
    })
}

fn next_free_id(alts: &BTreeMap<String, Alternative>, from: &mut usize) -> String {
    loop {
        let id = alt_id(*from);
        *from += 1;
        if !alts.contains_key(&id) {
            return id;
        }
    }
}

/// Among the channels `kept` (indices into a parent boundary), keeps the
/// `t` best by `scores`, or the first `t` when no scores are given.
fn restrict_kept(kept: &[usize], t: u32, scores: Option<&[f64]>) -> Vec<bool> {
    let sub: Option<Vec<f64>> = scores.map(|s| kept.iter().map(|&i| s[i]).collect());
    mask::top_k(kept.len() as u32, t, sub.as_deref())
}

/// Adds `n_expand` pruned clones of existing alternatives.
///
/// Parents are drawn uniformly from the alternatives that are wider than
/// their target (only those have channels to spare). For a boundary of
/// width `c` the kept count is uniform in `[⌈c/2⌉, c]`, raised to the
/// target width if it falls below. Kept channels are the top scorers when
/// `scores` has an entry for the parent, else the first ones.
pub fn expand<R: Rng + ?Sized>(
    house: &ModelHouse,
    n_expand: usize,
    scores: Option<&ScoreTable>,
    rng: &mut R,
) -> ModelHouse {
    let mut out = house.clone();
    if n_expand == 0 {
        return out;
    }
    let parents: Vec<&Alternative> = house
        .alternatives
        .values()
        .filter(|a| a.origin != Origin::Expanded)
        .filter(|a| {
            house.target(a).is_some_and(|t| {
                a.subnet.in_channels > t.in_channels || a.subnet.out_channels > t.out_channels
            })
        })
        .collect();
    if parents.is_empty() {
        warn!("no alternative is wider than its target; nothing to expand");
        return out;
    }

    let mut counter = house.alternatives.len();
    for _ in 0..n_expand {
        let parent = parents[rng.gen_range(0..parents.len())];
        let target = house.target(parent).expect("filtered above");
        let (c_in, c_out) = (parent.subnet.in_channels, parent.subnet.out_channels);
        let k_in = rng.gen_range(c_in.div_ceil(2)..=c_in).max(target.in_channels);
        let k_out = rng.gen_range(c_out.div_ceil(2)..=c_out).max(target.out_channels);

        let sc = scores.and_then(|t| t.get(&parent.id));
        let s_in = sc.map(|s| s.scores_in.as_slice()).filter(|s| s.len() == c_in as usize);
        let s_out = sc.map(|s| s.scores_out.as_slice()).filter(|s| s.len() == c_out as usize);
        let pruning = ChannelMask::new(mask::top_k(c_in, k_in, s_in), mask::top_k(c_out, k_out, s_out))
            .expect("kept counts are positive");

        let subnet = mask::narrow_subnet(&parent.subnet, k_in, k_out);
        let layers = mask::narrow_fragment(&parent.subnet, &parent.layers, k_in, k_out);
        let boundary = if k_in == target.in_channels && k_out == target.out_channels {
            None
        } else {
            Some(
                ChannelMask::new(
                    restrict_kept(&pruning.kept_in(), target.in_channels, s_in),
                    restrict_kept(&pruning.kept_out(), target.out_channels, s_out),
                )
                .expect("target widths are positive"),
            )
        };

        let id = next_free_id(&out.alternatives, &mut counter);
        out.alternatives.insert(
            id.clone(),
            Alternative {
                id,
                subnet,
                origin: Origin::Expanded,
                mask: boundary,
                target_id: parent.target_id.clone(),
                layers,
                edges: parent.edges.clone(),
                pruning: Some(pruning),
                parent: Some(parent.id.clone()),
            },
        );
    }
    out.params.n_expand = out.params.n_expand.max(out.count_by_origin(Origin::Expanded));
    out
}

/// [`construct`] followed by [`expand`] with `params.n_expand`, all drawn
/// from one generator seeded with `params.seed`.
pub fn build_house(
    teacher: &Network,
    pretrained: &[Network],
    params: &HouseParams,
    scores: Option<&ScoreTable>,
) -> Result<ModelHouse, HouseError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(params.seed);
    let house = construct(teacher, pretrained, params, &mut rng)?;
    Ok(expand(&house, params.n_expand, scores, &mut rng))
}

fn check_house(h: &ModelHouse) -> Vec<String> {
    let mut issues = Vec::new();
    for v in validate_network(&h.teacher) {
        issues.push(format!("teacher: {v}"));
    }

    let mut sets = BTreeSet::new();
    for (id, s) in &h.teacher_subnets {
        if !sets.insert(&s.layer_ids) {
            issues.push(format!("teacher sub-network `{id}` duplicates another member set"));
        }
        match subnetwork_from_layers(&h.teacher, s.layer_ids.iter().map(String::as_str)) {
            Ok(fresh) if &fresh == s => {}
            Ok(_) => issues.push(format!("teacher sub-network `{id}` summary is stale")),
            Err(e) => issues.push(format!("teacher sub-network `{id}`: {e}")),
        }
    }
    if h.teacher_subnets.len() > h.params.n_t {
        issues.push(format!("{} teacher sub-networks exceed n_t = {}", h.teacher_subnets.len(), h.params.n_t));
    }
    for (origin, cap) in [(Origin::Pretrained, h.params.n_p), (Origin::Expanded, h.params.n_expand)] {
        let n = h.count_by_origin(origin);
        if n > cap {
            issues.push(format!("{n} {} alternatives exceed the cap {cap}", origin.as_str()));
        }
    }

    for (id, a) in &h.alternatives {
        if id != &a.id {
            issues.push(format!("alternative keyed `{id}` carries id `{}`", a.id));
        }
        let Some(t) = h.target(a) else {
            issues.push(format!("alternative `{id}` targets unknown `{}`", a.target_id));
            continue;
        };
        if !is_compatible(&a.subnet, t) {
            issues.push(format!("alternative `{id}` is not compatible with `{}`", a.target_id));
        }
        match &a.mask {
            Some(m) => {
                if m.keep_in().len() != a.subnet.in_channels as usize
                    || m.keep_out().len() != a.subnet.out_channels as usize
                {
                    issues.push(format!("alternative `{id}`: mask length differs from its widths"));
                }
                if m.popcount_in() != t.in_channels || m.popcount_out() != t.out_channels {
                    issues.push(format!("alternative `{id}`: mask popcounts differ from target widths"));
                }
            }
            None => {
                if a.subnet.in_channels != t.in_channels || a.subnet.out_channels != t.out_channels {
                    issues.push(format!("alternative `{id}` is wider than its target but has no mask"));
                }
            }
        }
        if a.origin == Origin::Teacher && (&a.subnet != t || a.mask.is_some()) {
            issues.push(format!("identity alternative `{id}` differs from its target"));
        }
        match fragment_network(a, a.layers.clone()).and_then(|net| {
            subnetwork_from_layers(&net, a.subnet.layer_ids.iter().map(String::as_str))
                .map_err(|e| HouseError::Invalid(e.to_string()))
        }) {
            Ok(fresh) if fresh == a.subnet && fresh.len() == a.layers.len() => {}
            Ok(_) => issues.push(format!("alternative `{id}`: layers disagree with its summary")),
            Err(e) => issues.push(format!("alternative `{id}`: {e}")),
        }
    }
    issues
}
