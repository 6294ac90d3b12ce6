//! Canonical JSON form of a model house.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Alternative, ChannelMask, HouseError, HouseParams, ModelHouse, Origin};
use crate::ir::json::{layers_serde, network_serde, to_canonical_bytes};
use crate::ir::{Layer, Network, SubNetwork};

#[derive(Serialize, Deserialize)]
struct MaskDoc {
    keep_in: Vec<bool>,
    keep_out: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlternativeDoc {
    id: String,
    origin: Origin,
    target_id: String,
    #[serde(flatten)]
    subnet: SubNetwork,
    mask: Option<MaskDoc>,
    pruning: Option<MaskDoc>,
    parent: Option<String>,
    #[serde(with = "layers_serde")]
    layers: Vec<Layer>,
    edges: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HouseDoc {
    #[serde(with = "network_serde")]
    teacher: Network,
    teacher_subnets: BTreeMap<String, SubNetwork>,
    alternatives: Vec<AlternativeDoc>,
    params: HouseParams,
}

fn mask_doc(m: &ChannelMask) -> MaskDoc {
    MaskDoc {
        keep_in: m.keep_in().to_vec(),
        keep_out: m.keep_out().to_vec(),
    }
}

fn mask_from_doc(d: MaskDoc) -> Result<ChannelMask, HouseError> {
    Ok(ChannelMask::new(d.keep_in, d.keep_out)?)
}

pub fn serialize_house(h: &ModelHouse) -> Vec<u8> {
    let doc = HouseDoc {
        teacher: h.teacher.clone(),
        teacher_subnets: h.teacher_subnets.clone(),
        alternatives: h
            .alternatives
            .values()
            .map(|a| AlternativeDoc {
                id: a.id.clone(),
                origin: a.origin,
                target_id: a.target_id.clone(),
                subnet: a.subnet.clone(),
                mask: a.mask.as_ref().map(mask_doc),
                pruning: a.pruning.as_ref().map(mask_doc),
                parent: a.parent.clone(),
                layers: a.layers.clone(),
                edges: a.edges.clone(),
            })
            .collect(),
        params: h.params.clone(),
    };
    let v = serde_json::to_value(&doc).expect("house documents always serialize");
    to_canonical_bytes(&v)
}

/// Parses a house and re-checks every invariant against the embedded
/// teacher.
pub fn parse_house(bytes: &[u8]) -> Result<ModelHouse, HouseError> {
    let doc: HouseDoc = serde_json::from_slice(bytes).map_err(|e| HouseError::Format(e.to_string()))?;
    let mut alternatives = BTreeMap::new();
    for a in doc.alternatives {
        let alt = Alternative {
            id: a.id.clone(),
            subnet: a.subnet,
            origin: a.origin,
            mask: a.mask.map(mask_from_doc).transpose()?,
            target_id: a.target_id,
            layers: a.layers,
            edges: a.edges,
            pruning: a.pruning.map(mask_from_doc).transpose()?,
            parent: a.parent,
        };
        if alternatives.insert(a.id.clone(), alt).is_some() {
            return Err(HouseError::Invalid(format!("duplicate alternative id `{}`", a.id)));
        }
    }
    let house = ModelHouse {
        teacher: doc.teacher,
        teacher_subnets: doc.teacher_subnets,
        alternatives,
        params: doc.params,
    };
    let issues = house.check();
    if !issues.is_empty() {
        return Err(HouseError::Invalid(issues.join("; ")));
    }
    Ok(house)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::house::tests::wide_chain;
    use crate::house::{construct, expand};
    use crate::ir::testnets::chain4;
    use crate::rational::Rational;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_house() -> ModelHouse {
        let params = HouseParams {
            n_t: 4,
            n_p: 4,
            n_expand: 3,
            r: Rational::one(),
            min_size: 1,
            seed: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = construct(&chain4(), &[wide_chain(2)], &params, &mut rng).unwrap();
        expand(&h, 3, None, &mut rng)
    }

    #[test]
    fn round_trip() {
        let h = sample_house();
        let bytes = serialize_house(&h);
        let back = parse_house(&bytes).unwrap();
        assert_eq!(back, h);
        assert_eq!(serialize_house(&back), bytes);
    }

    #[test]
    fn document_shape() {
        let v: serde_json::Value = serde_json::from_slice(&serialize_house(&sample_house())).unwrap();
        let alt = &v["alternatives"][0];
        for key in ["id", "origin", "target_id", "member_ids", "source_network", "mask", "cost"] {
            assert!(alt.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["params"]["r"], "1/1");
    }

    #[test]
    fn tampered_target_is_rejected() {
        let bytes = serialize_house(&sample_house());
        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["alternatives"][0]["target_id"] = "T9999".into();
        let err = parse_house(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        assert!(matches!(err, HouseError::Invalid(_)), "{err}");
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert!(matches!(parse_house(b"{"), Err(HouseError::Format(_))));
    }
}
