//! Plan search: greedy steepest descent followed by simulated annealing.
//!
//! A plan is a set of alternatives whose targets do not share a teacher
//! layer. Scores come from [`Profile::score_of`]; lower is better.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::house::ModelHouse;
use crate::profile::{Profile, ProfileError};
use crate::rational::Rational;

/// Largest house [`exhaustive_search`] accepts by default.
pub const EXHAUSTIVE_CAP: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SearchError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("alternative `{alt}` targets unknown teacher sub-network `{target}`")]
    UnknownTarget { alt: String, target: String },
    #[error("{0} alternatives exceed the exhaustive-search cap of {1}")]
    TooLarge(usize, usize),
    #[error("plan is infeasible: {0}")]
    Infeasible(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// A feasible plan with its cached score terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Solution {
    pub plan: BTreeSet<String>,
    pub metric: Rational,
    pub dacc_sum: Rational,
    pub score: Rational,
    /// Teacher layers covered by the plan's targets.
    pub occupied: BTreeSet<String>,
}

impl Solution {
    /// Recomputes feasibility and every cached value from scratch.
    pub fn verify(&self, house: &ModelHouse, profile: &Profile) -> Result<(), SearchError> {
        let mut occupied = BTreeSet::new();
        for id in &self.plan {
            let alt = house
                .alternative(id)
                .ok_or_else(|| ProfileError::UnknownAlternative(id.clone()))?;
            let target = house.target(alt).ok_or_else(|| SearchError::UnknownTarget {
                alt: id.clone(),
                target: alt.target_id.clone(),
            })?;
            for l in &target.layer_ids {
                if !occupied.insert(l.clone()) {
                    return Err(SearchError::Infeasible(format!("layer `{l}` is replaced twice")));
                }
            }
        }
        if occupied != self.occupied {
            return Err(SearchError::Infeasible("occupied set is stale".into()));
        }
        let metric = crate::profile::incremental_metric(profile, &self.plan, house)?;
        let dacc = crate::profile::dacc_sum(profile, &self.plan, house)?;
        if metric != self.metric || dacc != self.dacc_sum || profile.score_of(&metric, &dacc) != self.score {
            return Err(SearchError::Infeasible("cached score terms are stale".into()));
        }
        Ok(())
    }

    /// Smaller score first, then the lexicographically smaller plan.
    fn better_than(&self, other: &Solution) -> bool {
        match self.score.cmp(&other.score) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => self.plan.iter().lt(other.plan.iter()),
        }
    }
}

/// Precomputed per-alternative data for fast incremental moves.
pub struct Evaluator<'a> {
    profile: &'a Profile,
    ids: Vec<String>,
    delta: Vec<Rational>,
    dacc: Vec<Rational>,
    targets: Vec<Vec<usize>>,
    layer_names: Vec<String>,
}

#[derive(Debug, Clone)]
struct State {
    in_plan: Vec<bool>,
    members: Vec<usize>,
    occupied: Vec<bool>,
    metric: Rational,
    dacc: Rational,
    score: Rational,
}

impl<'a> Evaluator<'a> {
    pub fn new(house: &'a ModelHouse, profile: &'a Profile) -> Result<Self, SearchError> {
        profile.check(house)?;
        let layer_names: Vec<String> = house.teacher.layers().iter().map(|l| l.id.clone()).collect();
        let mut ids = Vec::new();
        let mut delta = Vec::new();
        let mut dacc = Vec::new();
        let mut targets = Vec::new();
        for (id, alt) in &house.alternatives {
            let target = house.target(alt).ok_or_else(|| SearchError::UnknownTarget {
                alt: id.clone(),
                target: alt.target_id.clone(),
            })?;
            let t: Vec<usize> = target
                .layer_ids
                .iter()
                .filter_map(|l| house.teacher.index_of(l))
                .collect();
            ids.push(id.clone());
            delta.push(profile.delta(house, id)?);
            dacc.push(profile.dacc_of(id)?.clone());
            targets.push(t);
        }
        Ok(Evaluator {
            profile,
            ids,
            delta,
            dacc,
            targets,
            layer_names,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn empty_state(&self) -> State {
        let metric = self.profile.teacher_metric.clone();
        let dacc = Rational::zero();
        State {
            in_plan: vec![false; self.ids.len()],
            members: Vec::new(),
            occupied: vec![false; self.layer_names.len()],
            score: self.profile.score_of(&metric, &dacc),
            metric,
            dacc,
        }
    }

    fn fits(&self, s: &State, i: usize) -> bool {
        !self.targets[i].iter().any(|&l| s.occupied[l])
    }

    fn add(&self, s: &mut State, i: usize) {
        for &l in &self.targets[i] {
            s.occupied[l] = true;
        }
        s.in_plan[i] = true;
        s.members.push(i);
        s.metric += &self.delta[i];
        s.dacc += &self.dacc[i];
        s.score = self.profile.score_of(&s.metric, &s.dacc);
    }

    fn remove_at(&self, s: &mut State, pos: usize) {
        let i = s.members.swap_remove(pos);
        for &l in &self.targets[i] {
            s.occupied[l] = false;
        }
        s.in_plan[i] = false;
        s.metric -= &self.delta[i];
        s.dacc -= &self.dacc[i];
        s.score = self.profile.score_of(&s.metric, &s.dacc);
    }

    /// Score after adding `i`, without mutating.
    fn score_with(&self, s: &State, i: usize) -> Rational {
        let m = &s.metric + &self.delta[i];
        let d = &s.dacc + &self.dacc[i];
        self.profile.score_of(&m, &d)
    }

    fn to_solution(&self, s: &State) -> Solution {
        Solution {
            plan: s.members.iter().map(|&i| self.ids[i].clone()).collect(),
            metric: s.metric.clone(),
            dacc_sum: s.dacc.clone(),
            score: s.score.clone(),
            occupied: (0..s.occupied.len())
                .filter(|&l| s.occupied[l])
                .map(|l| self.layer_names[l].clone())
                .collect(),
        }
    }

    fn state_of(&self, sol: &Solution) -> Result<State, SearchError> {
        let mut s = self.empty_state();
        for id in &sol.plan {
            let i = self
                .ids
                .binary_search(id)
                .map_err(|_| ProfileError::UnknownAlternative(id.clone()))?;
            if !self.fits(&s, i) {
                return Err(SearchError::Infeasible(format!("`{id}` overlaps another member")));
            }
            self.add(&mut s, i);
        }
        Ok(s)
    }

    /// Builds the solution for an explicit plan, rejecting overlaps.
    pub fn solution(&self, plan: &BTreeSet<String>) -> Result<Solution, SearchError> {
        let sol = Solution {
            plan: plan.clone(),
            metric: Rational::zero(),
            dacc_sum: Rational::zero(),
            score: Rational::zero(),
            occupied: BTreeSet::new(),
        };
        Ok(self.to_solution(&self.state_of(&sol)?))
    }

    fn greedy_state(&self) -> State {
        let mut s = self.empty_state();
        loop {
            let mut best: Option<(usize, Rational)> = None;
            for i in 0..self.ids.len() {
                if !self.fits(&s, i) {
                    continue;
                }
                let sc = self.score_with(&s, i);
                if best.as_ref().is_none_or(|(_, b)| sc < *b) {
                    best = Some((i, sc));
                }
            }
            match best {
                Some((i, sc)) if sc < s.score => self.add(&mut s, i),
                _ => return s,
            }
        }
    }

    pub fn greedy_init(&self) -> Solution {
        self.to_solution(&self.greedy_state())
    }

    fn neighbor_state<R: Rng + ?Sized>(&self, s: &State, rng: &mut R, retry_draws: usize) -> State {
        let mut next = s.clone();
        if !next.members.is_empty() {
            let pos = rng.gen_range(0..next.members.len());
            self.remove_at(&mut next, pos);
        }
        if self.ids.is_empty() {
            return next;
        }
        let mut misses = 0;
        loop {
            let i = rng.gen_range(0..self.ids.len());
            if self.fits(&next, i) {
                self.add(&mut next, i);
            } else if misses < retry_draws {
                misses += 1;
            } else {
                break;
            }
        }
        next
    }

    /// Removes one random member, then adds uniform draws until the first
    /// draw that overlaps (or `retry_draws + 1` such draws).
    pub fn neighbor<R: Rng + ?Sized>(
        &self,
        sol: &Solution,
        rng: &mut R,
        retry_draws: usize,
    ) -> Result<Solution, SearchError> {
        let s = self.state_of(sol)?;
        Ok(self.to_solution(&self.neighbor_state(&s, rng, retry_draws)))
    }

    fn chain(&self, start: &State, cfg: &AnnealConfig, restart: usize) -> (State, Vec<TraceEntry>) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(restart as u64);
        let t0 = cfg.initial_temperature.to_f64();
        let cooling = cfg.cooling.to_f64();
        let mut temperature = t0;
        let mut current = start.clone();
        let mut best = start.clone();
        let mut trace = Vec::new();
        for it in 0..cfg.iterations {
            if it > 0 && cfg.cooling_interval > 0 && it % cfg.cooling_interval == 0 {
                temperature *= cooling;
            }
            let cand = self.neighbor_state(&current, &mut rng, cfg.retry_draws);
            let delta = &cand.score - &current.score;
            let accepted = if !delta.is_positive() {
                true
            } else {
                let u: f64 = rng.gen();
                temperature > 0.0 && u < (-delta.to_f64() / temperature).exp()
            };
            if cfg.record_trace {
                trace.push(TraceEntry {
                    restart,
                    iteration: it,
                    temperature,
                    score: cand.score.clone(),
                    accepted,
                });
            }
            if accepted {
                current = cand;
                if self.state_better(&current, &best) {
                    best = current.clone();
                }
            }
        }
        (best, trace)
    }

    fn state_better(&self, a: &State, b: &State) -> bool {
        match a.score.cmp(&b.score) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => self.sorted_ids(a).lt(&self.sorted_ids(b)),
        }
    }

    fn sorted_ids(&self, s: &State) -> Vec<&str> {
        let mut v: Vec<&str> = s.members.iter().map(|&i| self.ids[i].as_str()).collect();
        v.sort_unstable();
        v
    }

    pub fn anneal(&self, cfg: &AnnealConfig) -> Result<AnnealResult, SearchError> {
        cfg.check()?;
        let greedy = self.greedy_state();
        let run = |r: usize| self.chain(&greedy, cfg, r);
        let runs: Vec<(State, Vec<TraceEntry>)> = if cfg.parallel {
            (0..cfg.restarts).into_par_iter().map(run).collect()
        } else {
            (0..cfg.restarts).map(run).collect()
        };
        let mut best = greedy.clone();
        let mut trace = Vec::new();
        for (s, t) in runs {
            if self.state_better(&s, &best) {
                best = s;
            }
            trace.extend(t);
        }
        Ok(AnnealResult {
            best: self.to_solution(&best),
            greedy: self.to_solution(&greedy),
            trace,
        })
    }

    pub fn exhaustive(&self, cap: usize) -> Result<Solution, SearchError> {
        if self.ids.len() > cap {
            return Err(SearchError::TooLarge(self.ids.len(), cap));
        }
        let mut s = self.empty_state();
        let mut best = self.to_solution(&s);
        self.exhaust(0, &mut s, &mut best);
        Ok(best)
    }

    fn exhaust(&self, i: usize, s: &mut State, best: &mut Solution) {
        if i == self.ids.len() {
            let sol = self.to_solution(s);
            if sol.better_than(best) {
                *best = sol;
            }
            return;
        }
        self.exhaust(i + 1, s, best);
        if self.fits(s, i) {
            self.add(s, i);
            self.exhaust(i + 1, s, best);
            let pos = s.members.iter().position(|&m| m == i).expect("just added");
            self.remove_at(s, pos);
        }
    }

    /// A random feasible plan: alternatives are visited in random order and
    /// each one that still fits is kept with probability one half.
    pub fn random_plan<R: Rng + ?Sized>(&self, rng: &mut R) -> Solution {
        let mut order: Vec<usize> = (0..self.ids.len()).collect();
        order.shuffle(rng);
        let mut s = self.empty_state();
        for i in order {
            if rng.gen_bool(0.5) && self.fits(&s, i) {
                self.add(&mut s, i);
            }
        }
        self.to_solution(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnealConfig {
    pub iterations: usize,
    pub initial_temperature: Rational,
    /// Factor applied to the temperature every `cooling_interval` steps.
    pub cooling: Rational,
    pub cooling_interval: usize,
    /// Number of independent chains, each started from the greedy plan.
    pub restarts: usize,
    pub seed: u64,
    /// Overlapping draws tolerated per neighbor move before it stops.
    pub retry_draws: usize,
    pub parallel: bool,
    pub record_trace: bool,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            iterations: 5000,
            initial_temperature: Rational::one(),
            cooling: Rational::new(97, 100),
            cooling_interval: 50,
            restarts: 1,
            seed: 0,
            retry_draws: 0,
            parallel: false,
            record_trace: false,
        }
    }
}

impl AnnealConfig {
    fn check(&self) -> Result<(), SearchError> {
        if !self.initial_temperature.is_positive() {
            return Err(SearchError::Config("initial temperature must be positive".into()));
        }
        if !self.cooling.is_positive() || self.cooling >= Rational::one() {
            return Err(SearchError::Config("cooling must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub restart: usize,
    pub iteration: usize,
    pub temperature: f64,
    /// Score of the proposed neighbor.
    pub score: Rational,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealResult {
    pub best: Solution,
    pub greedy: Solution,
    pub trace: Vec<TraceEntry>,
}

pub fn greedy_init(house: &ModelHouse, profile: &Profile) -> Result<Solution, SearchError> {
    Ok(Evaluator::new(house, profile)?.greedy_init())
}

pub fn neighbor<R: Rng + ?Sized>(
    sol: &Solution,
    house: &ModelHouse,
    profile: &Profile,
    rng: &mut R,
) -> Result<Solution, SearchError> {
    Evaluator::new(house, profile)?.neighbor(sol, rng, 0)
}

pub fn anneal(house: &ModelHouse, profile: &Profile, cfg: &AnnealConfig) -> Result<AnnealResult, SearchError> {
    Evaluator::new(house, profile)?.anneal(cfg)
}

pub fn exhaustive_search(house: &ModelHouse, profile: &Profile, cap: usize) -> Result<Solution, SearchError> {
    Evaluator::new(house, profile)?.exhaustive(cap)
}

pub fn random_plan<R: Rng + ?Sized>(
    house: &ModelHouse,
    profile: &Profile,
    rng: &mut R,
) -> Result<Solution, SearchError> {
    Ok(Evaluator::new(house, profile)?.random_plan(rng))
}

/// The plan document written by `search` and read by `rewrite`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDoc {
    pub plan: Vec<String>,
    pub score: Rational,
    pub metric: Rational,
    pub dacc_sum: Rational,
}

impl From<&Solution> for PlanDoc {
    fn from(s: &Solution) -> Self {
        PlanDoc {
            plan: s.plan.iter().cloned().collect(),
            score: s.score.clone(),
            metric: s.metric.clone(),
            dacc_sum: s.dacc_sum.clone(),
        }
    }
}

pub fn serialize_plan(s: &Solution) -> Vec<u8> {
    let v = serde_json::to_value(PlanDoc::from(s)).expect("plans always serialize");
    crate::ir::json::to_canonical_bytes(&v)
}

pub fn parse_plan(bytes: &[u8]) -> Result<PlanDoc, serde_json::Error> {
    serde_json::from_slice(bytes)
}

/// One JSON object per line.
pub fn write_trace<W: Write>(trace: &[TraceEntry], mut w: W) -> std::io::Result<()> {
    for e in trace {
        let v = serde_json::json!({
            "restart": e.restart,
            "iteration": e.iteration,
            "temperature": e.temperature,
            "score": e.score.to_string(),
            "accepted": e.accepted,
        });
        writeln!(w, "{v}")?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::house::{Alternative, ModelHouse, Origin};
    use crate::ir::testnets::chain4;
    use crate::ir::{subnetwork_from_layers, CostVector};
    use crate::profile::tests::small_house;
    use crate::profile::{synth_profile, SynthOptions};
    use std::collections::BTreeMap;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    /// A house over CHAIN4 whose alternatives are the given targets; each
    /// alternative `i` gets metric `m` and loss `d` as listed.
    pub(crate) fn toy(targets: &[&[&str]], alts: &[(usize, i64, (i64, i64))], req: i64) -> (ModelHouse, Profile) {
        let teacher = chain4();
        let mut teacher_subnets = BTreeMap::new();
        let mut metrics = BTreeMap::new();
        for (k, t) in targets.iter().enumerate() {
            let s = subnetwork_from_layers(&teacher, t.iter().copied()).unwrap();
            metrics.insert(format!("T{k}"), Rational::from(s.cost.flops));
            teacher_subnets.insert(format!("T{k}"), s);
        }
        let mut alternatives = BTreeMap::new();
        let mut dacc = BTreeMap::new();
        for (j, &(k, m, (dn, dd))) in alts.iter().enumerate() {
            let id = format!("A{j}");
            let subnet = teacher_subnets[&format!("T{k}")].clone();
            let (layers, edges) = crate::house::fragment_of(&teacher, &subnet);
            alternatives.insert(
                id.clone(),
                Alternative {
                    id: id.clone(),
                    subnet,
                    origin: Origin::Pretrained,
                    mask: None,
                    target_id: format!("T{k}"),
                    layers,
                    edges,
                    pruning: None,
                    parent: None,
                },
            );
            metrics.insert(id.clone(), r(m, 1));
            dacc.insert(id, r(dn, dd));
        }
        let house = ModelHouse {
            teacher,
            teacher_subnets,
            alternatives,
            params: Default::default(),
        };
        let profile = Profile {
            metric_name: "flops".into(),
            teacher_metric: r(1000, 1),
            subnet_metrics: metrics,
            dacc,
            requirement: r(req, 1),
            lambda: Rational::one(),
        };
        (house, profile)
    }

    fn ids(s: &Solution) -> Vec<&str> {
        s.plan.iter().map(String::as_str).collect()
    }

    #[test]
    fn greedy_on_identity_only_house() {
        let (h, p) = toy(&[&["a", "b"], &["c"]], &[(0, 300, (0, 1)), (1, 300, (0, 1))], 1000);
        let s = greedy_init(&h, &p).unwrap();
        assert!(s.plan.is_empty());
        assert_eq!(s.score, Rational::one());
    }

    #[test]
    fn greedy_takes_unique_improvement() {
        // Target {a,b,c,d} has flops 1000; the alternative halves the total.
        let (h, p) = toy(&[&["a", "b", "c", "d"]], &[(0, 500, (0, 1))], 500);
        let s = greedy_init(&h, &p).unwrap();
        assert_eq!(ids(&s), ["A0"]);
        assert_eq!(s.score, Rational::one());
    }

    #[test]
    fn greedy_picks_one_of_overlapping() {
        let (h, p) = toy(&[&["a", "b"], &["b", "c"]], &[(0, 100, (0, 1)), (1, 400, (0, 1))], 500);
        assert_eq!(ids(&greedy_init(&h, &p).unwrap()), ["A0"]);
        // Equal improvements: the lower id wins.
        let (h, p) = toy(&[&["a", "b"], &["b", "c"]], &[(0, 200, (0, 1)), (1, 400, (0, 1))], 500);
        assert_eq!(ids(&greedy_init(&h, &p).unwrap()), ["A0"]);
    }

    #[test]
    fn neighbor_on_all_conflicting_house() {
        let (h, p) = toy(
            &[&["a", "b"], &["b", "c"], &["a", "b", "c"]],
            &[(0, 1, (0, 1)), (1, 1, (0, 1)), (2, 1, (0, 1))],
            1000,
        );
        let ev = Evaluator::new(&h, &p).unwrap();
        let empty = ev.solution(&BTreeSet::new()).unwrap();
        for seed in 0..100 {
            let n = ev.neighbor(&empty, &mut ChaCha8Rng::seed_from_u64(seed), 0).unwrap();
            assert_eq!(n.plan.len(), 1);
        }
    }

    #[test]
    fn neighbor_with_single_alternative() {
        let (h, p) = toy(&[&["b", "c"]], &[(0, 1, (0, 1))], 1000);
        let ev = Evaluator::new(&h, &p).unwrap();
        let one = ev.solution(&BTreeSet::from(["A0".to_string()])).unwrap();
        for seed in 0..50 {
            let n = ev.neighbor(&one, &mut ChaCha8Rng::seed_from_u64(seed), 0).unwrap();
            assert!(n.plan.len() <= 1);
        }
    }

    #[test]
    fn neighbor_and_anneal_stay_feasible() {
        for seed in 0..5 {
            let h = small_house(seed);
            let mut opts = SynthOptions::default();
            opts.requirement = Some(r(600, 1));
            let p = synth_profile(&h, &opts, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let ev = Evaluator::new(&h, &p).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = ev.greedy_init();
            for _ in 0..200 {
                s = ev.neighbor(&s, &mut rng, 0).unwrap();
                s.verify(&h, &p).unwrap();
            }
        }
    }

    #[test]
    fn zero_iterations_returns_greedy() {
        let h = small_house(4);
        let p = synth_profile(&h, &SynthOptions::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let cfg = AnnealConfig {
            iterations: 0,
            ..AnnealConfig::default()
        };
        let res = anneal(&h, &p, &cfg).unwrap();
        assert_eq!(res.best, res.greedy);
    }

    #[test]
    fn anneal_deterministic_and_parallel_agrees() {
        let h = small_house(6);
        let mut opts = SynthOptions::default();
        opts.requirement = Some(r(700, 1));
        let p = synth_profile(&h, &opts, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cfg = AnnealConfig {
            iterations: 300,
            restarts: 4,
            seed: 9,
            record_trace: true,
            ..AnnealConfig::default()
        };
        let a = anneal(&h, &p, &cfg).unwrap();
        let b = anneal(&h, &p, &cfg).unwrap();
        let c = anneal(&h, &p, &AnnealConfig { parallel: true, ..cfg.clone() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(a.best.score <= a.greedy.score);
        assert_eq!(a.trace.len(), 1200);
        a.best.verify(&h, &p).unwrap();
    }

    #[test]
    fn cold_anneal_never_goes_uphill() {
        let h = small_house(8);
        let mut opts = SynthOptions::default();
        opts.requirement = Some(r(500, 1));
        let p = synth_profile(&h, &opts, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let cfg = AnnealConfig {
            iterations: 500,
            initial_temperature: r(1, 1_000_000_000),
            record_trace: true,
            ..AnnealConfig::default()
        };
        let res = anneal(&h, &p, &cfg).unwrap();
        let mut current = res.greedy.score.clone();
        for e in &res.trace {
            if e.accepted {
                assert!(e.score <= current, "uphill move at {}", e.iteration);
                current = e.score.clone();
            }
        }
    }

    #[test]
    fn exhaustive_cases() {
        let (h, p) = toy(&[], &[], 1000);
        assert!(exhaustive_search(&h, &p, EXHAUSTIVE_CAP).unwrap().plan.is_empty());

        let (h, p) = toy(&[&["a", "b", "c", "d"]], &[(0, 500, (0, 1))], 500);
        assert_eq!(ids(&exhaustive_search(&h, &p, EXHAUSTIVE_CAP).unwrap()), ["A0"]);

        // Pairwise conflicting: feasible plans are {}, {A0}, {A1}, {A2} with
        // metrics 1000, 800, 600, 500 against R = 500.
        let (h, p) = toy(
            &[&["a", "b"], &["b", "c"], &["a", "b", "c"]],
            &[(0, 100, (1, 100)), (1, 100, (0, 1)), (2, 100, (0, 1))],
            500,
        );
        let best = exhaustive_search(&h, &p, EXHAUSTIVE_CAP).unwrap();
        assert_eq!(ids(&best), ["A2"]);
        let err = exhaustive_search(&h, &p, 2).unwrap_err();
        assert_eq!(err, SearchError::TooLarge(3, 2));
    }

    #[test]
    fn anneal_escapes_greedy_trap() {
        // A0 on {a,b,c} saves 500 alone; A1 on {a,b} and A2 on {c,d} save
        // 300 + 400 together but both overlap A0.
        let (h, p) = toy(
            &[&["a", "b", "c"], &["a", "b"], &["c", "d"]],
            &[(0, 100, (0, 1)), (1, 0, (0, 1)), (2, 300, (0, 1))],
            100,
        );
        let greedy = greedy_init(&h, &p).unwrap();
        assert_eq!(ids(&greedy), ["A0"]);
        assert_eq!(greedy.score, r(5, 1));
        let cfg = AnnealConfig {
            iterations: 500,
            restarts: 4,
            seed: 1,
            ..AnnealConfig::default()
        };
        let best = anneal(&h, &p, &cfg).unwrap().best;
        assert_eq!(ids(&best), ["A1", "A2"]);
        assert_eq!(best.score, r(3, 1));
        assert_eq!(best, exhaustive_search(&h, &p, EXHAUSTIVE_CAP).unwrap());
    }

    #[test]
    fn random_plan_is_feasible() {
        let h = small_house(2);
        let p = synth_profile(&h, &SynthOptions::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for seed in 0..50 {
            let s = random_plan(&h, &p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            s.verify(&h, &p).unwrap();
        }
    }

    #[test]
    fn plan_document() {
        let (h, p) = toy(&[&["a", "b", "c", "d"]], &[(0, 500, (0, 1))], 500);
        let s = greedy_init(&h, &p).unwrap();
        let bytes = serialize_plan(&s);
        let doc = parse_plan(&bytes).unwrap();
        assert_eq!(doc.plan, ["A0"]);
        assert_eq!(doc.score, Rational::one());
        let mut out = Vec::new();
        let t = TraceEntry {
            restart: 0,
            iteration: 3,
            temperature: 0.5,
            score: r(3, 2),
            accepted: true,
        };
        write_trace(&[t], &mut out).unwrap();
        let line: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert_eq!(line["score"], "3/2");
        let _ = CostVector::default();
    }
}
