//! Single-input/single-output sub-network discovery.
//!
//! [`modified_dfs`] walks the graph from a start layer, only stepping onto a
//! layer once every inbound neighbour has been popped. A pop at which the
//! stack held nothing but the popped layer is a *closure candidate*: the
//! popped prefix may form a SISO region ending at that layer.
//!
//! The singleton-stack test alone is not sufficient. On a diamond
//! `l0→{l1,l2}→l3`, popping the second branch layer leaves the stack empty
//! while the first branch still has an edge waiting on the join, so the
//! popped prefix has two output layers. Candidates are therefore also
//! required to have no pending inbound counts on unpushed layers
//! (`pending_out == 0`) and are re-checked against the exact SISO predicate
//! before being emitted.
//!
//! [`enumerate_all`] runs the traversal from every eligible start layer;
//! [`brute_force_enumerate`] is the exhaustive subset oracle it is tested
//! against.

use std::collections::{BTreeMap, BTreeSet};

use crate::ir::{Network, SubNetwork, SubnetError};
use crate::ir::{siso_boundary, subnet_from_mask};

/// Default layer cap for [`brute_force_enumerate`].
pub const BRUTE_FORCE_CAP: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnumError {
    #[error("unknown start layer `{0}`")]
    UnknownLayer(String),
    #[error("start layer `{0}` has {1} inbound connections; at most one is allowed")]
    StartNotSingleInput(String, usize),
    #[error("network has {0} layers; brute force is capped at {1}")]
    TooLarge(usize, usize),
}

/// Which pops count as closure events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClosureRule {
    /// Singleton stack, no pending inbound counts, and an exact SISO re-check.
    #[default]
    Strengthened,
    /// Singleton stack only. Unsound on merges; kept for regression tests.
    SingletonStack,
}

/// A popped prefix `P_i ∪ {l_i}` recorded at a closure event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClosurePair {
    pub output_layer: String,
    pub member_ids: BTreeSet<String>,
    pub pop_index: usize,
}

/// Result of one pop of the traversal stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PopEvent {
    pub layer: usize,
    pub pop_index: usize,
    /// The popped layer was the only element on the stack.
    pub singleton: bool,
    /// Pending inbound counts on not-yet-pushed layers, before expanding
    /// the popped layer.
    pub pending_out: usize,
}

/// State of the modified DFS.
#[derive(Debug, Clone)]
pub struct TraversalState<'a> {
    net: &'a Network,
    stack: Vec<usize>,
    delta: Vec<usize>,
    pushed: Vec<bool>,
    popped: Vec<usize>,
    pending_out: usize,
    rotation: usize,
}

impl<'a> TraversalState<'a> {
    pub fn new(net: &'a Network, start: usize) -> Self {
        Self::with_rotation(net, start, 0)
    }

    /// Rotates every outbound neighbour list left by `rotation` before
    /// iterating it.
    pub fn with_rotation(net: &'a Network, start: usize, rotation: usize) -> Self {
        let mut pushed = vec![false; net.len()];
        pushed[start] = true;
        TraversalState {
            net,
            stack: vec![start],
            delta: vec![0; net.len()],
            pushed,
            popped: Vec::new(),
            pending_out: 0,
            rotation,
        }
    }

    pub fn stack(&self) -> &[usize] {
        &self.stack
    }

    pub fn delta(&self) -> &[usize] {
        &self.delta
    }

    pub fn popped(&self) -> &[usize] {
        &self.popped
    }

    pub fn pending_out(&self) -> usize {
        self.pending_out
    }

    pub fn is_pushed(&self, v: usize) -> bool {
        self.pushed[v]
    }

    /// Pops one layer and pushes every outbound neighbour whose inbound
    /// layers have now all been visited.
    pub fn pop(&mut self) -> Option<PopEvent> {
        let v = self.stack.pop()?;
        let event = PopEvent {
            layer: v,
            pop_index: self.popped.len(),
            singleton: self.stack.is_empty(),
            pending_out: self.pending_out,
        };
        self.popped.push(v);
        let out = self.net.outbound(v);
        let k = if out.is_empty() { 0 } else { self.rotation % out.len() };
        for &u in out[k..].iter().chain(&out[..k]) {
            if self.pushed[u] {
                // Only reachable on cyclic input.
                continue;
            }
            self.delta[u] += 1;
            self.pending_out += 1;
            if self.delta[u] == self.net.inbound(u).len() {
                self.pending_out -= self.delta[u];
                self.pushed[u] = true;
                self.stack.push(u);
            }
        }
        Some(event)
    }
}

fn start_index(net: &Network, start: &str) -> Result<usize, EnumError> {
    let i = net
        .index_of(start)
        .ok_or_else(|| EnumError::UnknownLayer(start.to_string()))?;
    let conns = net.in_connections(i);
    if conns > 1 {
        return Err(EnumError::StartNotSingleInput(start.to_string(), conns));
    }
    Ok(i)
}

/// Layers that may start a traversal: at most one inbound connection.
pub fn eligible_starts(net: &Network) -> Vec<usize> {
    (0..net.len()).filter(|&i| net.in_connections(i) <= 1).collect()
}

fn pair_of(net: &Network, popped: &[usize], pop_index: usize) -> ClosurePair {
    ClosurePair {
        output_layer: net.layer_at(popped[pop_index]).id.clone(),
        member_ids: popped[..=pop_index]
            .iter()
            .map(|&v| net.layer_at(v).id.clone())
            .collect(),
        pop_index,
    }
}

pub(crate) fn traverse(
    net: &Network,
    start: usize,
    rule: ClosureRule,
    rotation: usize,
) -> Vec<ClosurePair> {
    let mut state = TraversalState::with_rotation(net, start, rotation);
    let mut members = vec![false; net.len()];
    let mut pairs = Vec::new();
    while let Some(ev) = state.pop() {
        members[ev.layer] = true;
        if !ev.singleton {
            continue;
        }
        let accept = match rule {
            ClosureRule::SingletonStack => true,
            ClosureRule::Strengthened => ev.pending_out == 0 && siso_boundary(net, &members).is_ok(),
        };
        if accept {
            pairs.push(pair_of(net, state.popped(), ev.pop_index));
        }
    }
    pairs
}

/// Runs the modified DFS from `start` with lexicographic neighbour order and
/// returns every closure event in pop order.
pub fn modified_dfs(net: &Network, start: &str) -> Result<Vec<ClosurePair>, EnumError> {
    modified_dfs_with(net, start, ClosureRule::Strengthened)
}

pub fn modified_dfs_with(
    net: &Network,
    start: &str,
    rule: ClosureRule,
) -> Result<Vec<ClosurePair>, EnumError> {
    let s = start_index(net, start)?;
    Ok(traverse(net, s, rule, 0))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EnumerateOptions {
    /// Also union traversals over every rotation of the neighbour lists.
    pub rotate_neighbor_orders: bool,
}

/// Every SISO sub-network reachable by the modified DFS from some eligible
/// start, deduplicated and sorted by member ids.
pub fn enumerate_all(net: &Network) -> Vec<SubNetwork> {
    enumerate_all_with(net, EnumerateOptions::default())
}

pub fn enumerate_all_with(net: &Network, opts: EnumerateOptions) -> Vec<SubNetwork> {
    let rotations = if opts.rotate_neighbor_orders {
        (0..net.len())
            .map(|i| net.outbound(i).len())
            .max()
            .unwrap_or(1)
            .max(1)
    } else {
        1
    };
    let mut found: BTreeMap<BTreeSet<String>, SubNetwork> = BTreeMap::new();
    for start in eligible_starts(net) {
        for rot in 0..rotations {
            for pair in traverse(net, start, ClosureRule::Strengthened, rot) {
                if found.contains_key(&pair.member_ids) {
                    continue;
                }
                let sub = pair_to_subnet(net, &pair)
                    .expect("strengthened closure pairs are SISO");
                found.insert(pair.member_ids, sub);
            }
        }
    }
    found.into_values().collect()
}

pub fn pair_to_subnet(net: &Network, pair: &ClosurePair) -> Result<SubNetwork, SubnetError> {
    let mut members = vec![false; net.len()];
    for id in &pair.member_ids {
        members[net
            .index_of(id)
            .ok_or_else(|| SubnetError::UnknownLayer(id.clone()))?] = true;
    }
    subnet_from_mask(net, &members)
}

/// Exhaustive oracle: every non-empty layer subset that passes the SISO
/// predicate. Exponential; refuses networks above `cap` layers.
pub fn brute_force_enumerate(net: &Network, cap: usize) -> Result<Vec<SubNetwork>, EnumError> {
    let n = net.len();
    if n > cap || n >= 63 {
        return Err(EnumError::TooLarge(n, cap));
    }
    let mut out = Vec::new();
    let mut members = vec![false; n];
    for mask in 1u64..(1u64 << n) {
        for (i, m) in members.iter_mut().enumerate() {
            *m = mask & (1 << i) != 0;
        }
        if let Ok(s) = subnet_from_mask(net, &members) {
            out.push(s);
        }
    }
    out.sort_by(|a, b| a.layer_ids.cmp(&b.layer_ids));
    Ok(out)
}

/// Member-id lists, the JSON shape used by the `enumerate` command.
pub fn member_lists(subnets: &[SubNetwork]) -> Vec<Vec<String>> {
    subnets
        .iter()
        .map(|s| s.layer_ids.iter().cloned().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::testnets::*;
    use crate::ir::{Layer, LayerKind};

    fn sets(pairs: &[ClosurePair]) -> Vec<Vec<&str>> {
        pairs
            .iter()
            .map(|p| p.member_ids.iter().map(String::as_str).collect())
            .collect()
    }

    #[test]
    fn chain_prefixes_from_a() {
        let pairs = modified_dfs(&chain4(), "a").unwrap();
        assert_eq!(
            sets(&pairs),
            vec![vec!["a"], vec!["a", "b"], vec!["a", "b", "c"], vec!["a", "b", "c", "d"]]
        );
        assert_eq!(pairs.iter().map(|p| p.pop_index).collect::<Vec<_>>(), [0, 1, 2, 3]);
        assert_eq!(pairs[2].output_layer, "c");
    }

    #[test]
    fn chain_prefixes_from_b() {
        let pairs = modified_dfs(&chain4(), "b").unwrap();
        assert_eq!(sets(&pairs), vec![vec!["b"], vec!["b", "c"], vec!["b", "c", "d"]]);
    }

    #[test]
    fn diamond_from_root() {
        let pairs = modified_dfs(&diamond(), "l0").unwrap();
        assert_eq!(sets(&pairs), vec![vec!["l0"], vec!["l0", "l1", "l2", "l3"]]);
    }

    #[test]
    fn diamond_pending_guard_trace() {
        // Pops: l0 (singleton), l2 (stack [l1,l2]), l1 (singleton, one count
        // pending on l3), l3 (singleton).
        let net = diamond();
        let mut st = TraversalState::new(&net, 0);
        let evs: Vec<PopEvent> = std::iter::from_fn(|| st.pop()).collect();
        let order: Vec<usize> = evs.iter().map(|e| e.layer).collect();
        assert_eq!(order, [0, 2, 1, 3]);
        assert_eq!(
            evs.iter().map(|e| (e.singleton, e.pending_out)).collect::<Vec<_>>(),
            [(true, 0), (false, 0), (true, 1), (true, 0)]
        );
    }

    #[test]
    fn singleton_rule_alone_emits_the_invalid_prefix() {
        let pairs = modified_dfs_with(&diamond(), "l0", ClosureRule::SingletonStack).unwrap();
        let s = sets(&pairs);
        assert!(s.contains(&vec!["l0", "l1", "l2"]));
        let bad = pairs.iter().find(|p| p.member_ids.len() == 3).unwrap();
        assert!(pair_to_subnet(&diamond(), bad).is_err());
    }

    #[test]
    fn start_preconditions() {
        assert_eq!(
            modified_dfs(&diamond(), "l3").unwrap_err(),
            EnumError::StartNotSingleInput("l3".into(), 2)
        );
        assert!(matches!(modified_dfs(&diamond(), "q"), Err(EnumError::UnknownLayer(_))));
    }

    #[test]
    fn chain_count_and_oracle_agree() {
        let all = enumerate_all(&chain4());
        assert_eq!(all.len(), 10);
        let oracle = brute_force_enumerate(&chain4(), BRUTE_FORCE_CAP).unwrap();
        assert_eq!(member_lists(&all), member_lists(&oracle));
    }

    #[test]
    fn diamond_matches_oracle() {
        let all = enumerate_all(&diamond());
        let oracle = brute_force_enumerate(&diamond(), BRUTE_FORCE_CAP).unwrap();
        assert_eq!(member_lists(&all), member_lists(&oracle));
        assert_eq!(
            member_lists(&all),
            vec![
                vec!["l0".to_string()],
                vec!["l0".into(), "l1".into(), "l2".into(), "l3".into()],
                vec!["l1".into()],
                vec!["l2".into()],
            ]
        );
    }

    #[test]
    fn isolated_layers_are_singletons() {
        let ids = ["x", "y", "z"];
        let net = Network::new(
            "iso",
            ids.iter().map(|i| Layer::new(*i, LayerKind::Dense, 4, 4)).collect(),
            [],
            ids.iter().map(|s| s.to_string()),
            ids.iter().map(|s| s.to_string()),
        )
        .unwrap();
        let oracle = brute_force_enumerate(&net, BRUTE_FORCE_CAP).unwrap();
        assert_eq!(oracle.len(), 3);
        assert_eq!(member_lists(&enumerate_all(&net)), member_lists(&oracle));
    }

    #[test]
    fn single_layer_network() {
        let net = Network::new(
            "one",
            vec![Layer::new("only", LayerKind::Conv, 3, 8)],
            [],
            ["only".to_string()],
            ["only".to_string()],
        )
        .unwrap();
        assert_eq!(enumerate_all(&net).len(), 1);
    }

    #[test]
    fn brute_force_cap() {
        assert_eq!(
            brute_force_enumerate(&chain4(), 3).unwrap_err(),
            EnumError::TooLarge(4, 3)
        );
    }

    #[test]
    fn rotation_option_does_not_change_result() {
        let plain = enumerate_all(&diamond());
        let rotated = enumerate_all_with(
            &diamond(),
            EnumerateOptions {
                rotate_neighbor_orders: true,
            },
        );
        assert_eq!(plain, rotated);
    }
}
