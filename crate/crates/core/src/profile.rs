//! Per-block metric and accuracy-loss data, and the plan score built on it.
//!
//! `score(S) = max(1, metric(N_S)/R) + λ·Σ_{A∈S} Δacc(A)`, minimized, with
//! `metric(N_S)` approximated as `metric(T) + Σ_{A∈S} (metric(A) − metric(TMap[A]))`.
//! Everything is exact rational arithmetic.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::house::{effective_subnet, ModelHouse, Origin};
use crate::ir::{MetricSelector, SubNetwork};
use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProfileError {
    #[error("unknown alternative `{0}`")]
    UnknownAlternative(String),
    #[error("profile has no {what} entry for `{id}`")]
    Missing { what: &'static str, id: String },
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("malformed profile document: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub metric_name: String,
    pub teacher_metric: Rational,
    /// Metric per teacher sub-network id and per alternative id.
    pub subnet_metrics: BTreeMap<String, Rational>,
    /// Accuracy loss per alternative id; positive means worse.
    pub dacc: BTreeMap<String, Rational>,
    pub requirement: Rational,
    pub lambda: Rational,
}

impl Profile {
    fn metric(&self, id: &str) -> Result<&Rational, ProfileError> {
        self.subnet_metrics.get(id).ok_or_else(|| ProfileError::Missing {
            what: "metric",
            id: id.to_string(),
        })
    }

    fn loss(&self, id: &str) -> Result<&Rational, ProfileError> {
        self.dacc.get(id).ok_or_else(|| ProfileError::Missing {
            what: "dacc",
            id: id.to_string(),
        })
    }

    /// `metric(A) − metric(TMap[A])`.
    pub fn delta(&self, house: &ModelHouse, alt_id: &str) -> Result<Rational, ProfileError> {
        let alt = house
            .alternative(alt_id)
            .ok_or_else(|| ProfileError::UnknownAlternative(alt_id.to_string()))?;
        Ok(self.metric(alt_id)? - self.metric(&alt.target_id)?)
    }

    pub fn dacc_of(&self, alt_id: &str) -> Result<&Rational, ProfileError> {
        self.loss(alt_id)
    }

    /// `max(1, metric/R) + λ·dacc_sum`.
    pub fn score_of(&self, metric: &Rational, dacc_sum: &Rational) -> Rational {
        let ratio = metric / &self.requirement;
        ratio.max(Rational::one()) + &self.lambda * dacc_sum
    }

    /// Checks the scalar fields and that every alternative of `house` (and
    /// every target) is covered.
    pub fn check(&self, house: &ModelHouse) -> Result<(), ProfileError> {
        if !self.teacher_metric.is_positive() {
            return Err(ProfileError::Invalid("teacher_metric must be positive".into()));
        }
        if !self.requirement.is_positive() {
            return Err(ProfileError::Invalid("requirement must be positive".into()));
        }
        if self.lambda.is_negative() {
            return Err(ProfileError::Invalid("lambda must be non-negative".into()));
        }
        if let Some((id, _)) = self.subnet_metrics.iter().find(|(_, v)| v.is_negative()) {
            return Err(ProfileError::Invalid(format!("metric of `{id}` is negative")));
        }
        for (id, alt) in &house.alternatives {
            self.metric(id)?;
            self.loss(id)?;
            self.metric(&alt.target_id)?;
        }
        Ok(())
    }
}

fn plan_alternatives<'a>(
    house: &ModelHouse,
    plan: &'a BTreeSet<String>,
) -> Result<impl Iterator<Item = &'a String>, ProfileError> {
    if let Some(bad) = plan.iter().find(|id| house.alternative(id).is_none()) {
        return Err(ProfileError::UnknownAlternative(bad.clone()));
    }
    Ok(plan.iter())
}

/// Estimated metric of the network induced by `plan`.
pub fn incremental_metric(
    profile: &Profile,
    plan: &BTreeSet<String>,
    house: &ModelHouse,
) -> Result<Rational, ProfileError> {
    let mut m = profile.teacher_metric.clone();
    for id in plan_alternatives(house, plan)? {
        m += &profile.delta(house, id)?;
    }
    Ok(m)
}

pub fn dacc_sum(profile: &Profile, plan: &BTreeSet<String>, house: &ModelHouse) -> Result<Rational, ProfileError> {
    let mut s = Rational::zero();
    for id in plan_alternatives(house, plan)? {
        s += profile.loss(id)?;
    }
    Ok(s)
}

pub fn score(profile: &Profile, plan: &BTreeSet<String>, house: &ModelHouse) -> Result<Rational, ProfileError> {
    let m = incremental_metric(profile, plan, house)?;
    let d = dacc_sum(profile, plan, house)?;
    Ok(profile.score_of(&m, &d))
}

/// How synthetic accuracy losses are drawn.
///
/// Each non-identity alternative gets `u · reduction`, where `u` is uniform
/// on the grid `{0, max/steps, …, max}` and `reduction` is the relative
/// metric saving over its target, clamped at zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DaccDistribution {
    pub max: Rational,
    pub steps: u32,
}

impl Default for DaccDistribution {
    fn default() -> Self {
        DaccDistribution {
            max: Rational::new(1, 20),
            steps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthOptions {
    pub metric: MetricSelector,
    /// Defaults to the teacher metric when absent.
    pub requirement: Option<Rational>,
    pub lambda: Rational,
    pub dacc: DaccDistribution,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            metric: MetricSelector::Flops,
            requirement: None,
            lambda: Rational::one(),
            dacc: DaccDistribution::default(),
        }
    }
}

/// Builds a profile whose metrics are member-layer cost sums (after
/// masking) and whose accuracy losses are synthetic.
///
/// Alternatives are visited in id order and each draws once, so equal
/// inputs give equal profiles.
pub fn synth_profile<R: Rng + ?Sized>(
    house: &ModelHouse,
    opts: &SynthOptions,
    rng: &mut R,
) -> Result<Profile, ProfileError> {
    let metric_of = |s: &SubNetwork| opts.metric.extract(&s.cost);
    let teacher_metric = opts.metric.extract(&house.teacher.total_cost());
    let mut subnet_metrics: BTreeMap<String, Rational> = house
        .teacher_subnets
        .iter()
        .map(|(id, s)| (id.clone(), metric_of(s)))
        .collect();
    let mut dacc = BTreeMap::new();
    for (id, alt) in &house.alternatives {
        let eff = effective_subnet(alt).map_err(|e| ProfileError::Invalid(e.to_string()))?;
        let m = metric_of(&eff);
        let draw = rng.gen_range(0..=opts.dacc.steps);
        let loss = match (alt.origin, house.target(alt)) {
            (Origin::Teacher, _) => Rational::zero(),
            (_, Some(t)) => {
                let tm = metric_of(t);
                if tm.is_positive() && m < tm {
                    let reduction = (&tm - &m) / &tm;
                    let u = &opts.dacc.max * &Rational::new(i64::from(draw), i64::from(opts.dacc.steps.max(1)));
                    u * reduction
                } else {
                    Rational::zero()
                }
            }
            (_, None) => return Err(ProfileError::Invalid(format!("alternative `{id}` has no target"))),
        };
        subnet_metrics.insert(id.clone(), m);
        dacc.insert(id.clone(), loss);
    }
    Ok(Profile {
        metric_name: opts.metric.to_string(),
        requirement: opts.requirement.clone().unwrap_or_else(|| teacher_metric.clone()),
        teacher_metric,
        subnet_metrics,
        dacc,
        lambda: opts.lambda.clone(),
    })
}

pub fn serialize_profile(p: &Profile) -> Vec<u8> {
    let v = serde_json::to_value(p).expect("profiles always serialize");
    crate::ir::json::to_canonical_bytes(&v)
}

pub fn parse_profile(bytes: &[u8]) -> Result<Profile, ProfileError> {
    serde_json::from_slice(bytes).map_err(|e| ProfileError::Format(e.to_string()))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::house::tests::wide_chain;
    use crate::house::{construct, expand, HouseParams};
    use crate::ir::testnets::chain4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    pub(crate) fn small_house(seed: u64) -> ModelHouse {
        let params = HouseParams {
            n_t: 4,
            n_p: 4,
            n_expand: 4,
            r: Rational::one(),
            min_size: 1,
            seed,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = construct(&chain4(), &[wide_chain(2)], &params, &mut rng).unwrap();
        expand(&h, 4, None, &mut rng)
    }

    /// A profile over `house` with hand-set metrics for two alternatives.
    fn fixed(house: &ModelHouse, teacher: i64, entries: &[(&str, i64, i64, (i64, i64))]) -> Profile {
        let mut p = Profile {
            metric_name: "flops".into(),
            teacher_metric: r(teacher, 1),
            subnet_metrics: BTreeMap::new(),
            dacc: BTreeMap::new(),
            requirement: r(teacher, 1),
            lambda: Rational::one(),
        };
        for &(aid, alt_m, target_m, (dn, dd)) in entries {
            let t = &house.alternative(aid).unwrap().target_id;
            p.subnet_metrics.insert(aid.into(), r(alt_m, 1));
            p.subnet_metrics.insert(t.clone(), r(target_m, 1));
            p.dacc.insert(aid.into(), r(dn, dd));
        }
        p
    }

    /// A house with two pretrained alternatives on distinct targets.
    fn two_target_house() -> (ModelHouse, String, String) {
        for seed in 0..200 {
            let h = small_house(seed);
            let mut by_target: BTreeMap<&str, &str> = BTreeMap::new();
            for a in h.alternatives.values().filter(|a| a.origin == Origin::Pretrained) {
                by_target.entry(&a.target_id).or_insert(&a.id);
            }
            if by_target.len() >= 2 {
                let mut it = by_target.values();
                let a = it.next().unwrap().to_string();
                let b = it.next().unwrap().to_string();
                return (h, a, b);
            }
        }
        panic!("no seed gives two targets");
    }

    fn plan(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn incremental_arithmetic() {
        let (h, a1, a2) = two_target_house();
        let p = fixed(&h, 100, &[(&a1, 12, 30, (0, 1)), (&a2, 9, 20, (0, 1))]);
        assert_eq!(incremental_metric(&p, &plan(&[&a1, &a2]), &h).unwrap(), r(71, 1));
        assert_eq!(incremental_metric(&p, &plan(&[]), &h).unwrap(), r(100, 1));
    }

    #[test]
    fn identity_alternative_keeps_metric() {
        let h = small_house(1);
        let p = synth_profile(&h, &SynthOptions::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let id = h.alternatives.values().find(|a| a.origin == Origin::Teacher).unwrap().id.clone();
        assert_eq!(incremental_metric(&p, &plan(&[&id]), &h).unwrap(), p.teacher_metric);
        assert_eq!(p.dacc[&id], Rational::zero());
    }

    #[test]
    fn score_examples() {
        let (h, a1, a2) = two_target_house();
        let mut p = fixed(&h, 100, &[(&a1, 12, 30, (1, 20)), (&a2, 9, 20, (0, 1))]);
        let both = plan(&[&a1, &a2]);
        p.requirement = r(80, 1);
        assert_eq!(score(&p, &both, &h).unwrap(), r(105, 100));
        p.requirement = r(50, 1);
        assert_eq!(score(&p, &both, &h).unwrap(), r(147, 100));
        p.requirement = r(100, 1);
        assert_eq!(score(&p, &plan(&[]), &h).unwrap(), Rational::one());
    }

    #[test]
    fn unknown_alternative() {
        let h = small_house(1);
        let p = synth_profile(&h, &SynthOptions::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(
            score(&p, &plan(&["nope"]), &h).unwrap_err(),
            ProfileError::UnknownAlternative("nope".into())
        );
    }

    #[test]
    fn synth_is_deterministic_and_covering() {
        let h = small_house(3);
        let a = synth_profile(&h, &SynthOptions::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = synth_profile(&h, &SynthOptions::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(serialize_profile(&a), serialize_profile(&b));
        a.check(&h).unwrap();
        for (id, alt) in &h.alternatives {
            let d = &a.dacc[id];
            assert!(!d.is_negative() && d <= &r(1, 20));
            if a.subnet_metrics[id] >= a.subnet_metrics[&alt.target_id] {
                assert!(d.is_zero(), "{id}");
            }
        }
    }

    #[test]
    fn round_trip() {
        let h = small_house(2);
        let opts = SynthOptions {
            metric: "latency_us:cpu0".parse().unwrap(),
            requirement: Some(r(3, 4)),
            lambda: r(1, 2),
            ..SynthOptions::default()
        };
        let p = synth_profile(&h, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let bytes = serialize_profile(&p);
        assert_eq!(parse_profile(&bytes).unwrap(), p);
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["lambda"], "1/2");
        assert_eq!(v["metric_name"], "latency_us:cpu0");
    }

    #[test]
    fn check_rejects_bad_scalars() {
        let h = small_house(2);
        let mut p = synth_profile(&h, &SynthOptions::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        p.requirement = Rational::zero();
        assert!(matches!(p.check(&h), Err(ProfileError::Invalid(_))));
        p.requirement = Rational::one();
        let first = h.alternatives.keys().next().unwrap().clone();
        p.dacc.remove(&first);
        assert!(matches!(p.check(&h), Err(ProfileError::Missing { what: "dacc", .. })));
    }
}
