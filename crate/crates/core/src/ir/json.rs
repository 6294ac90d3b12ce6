//! Canonical JSON form of the IR.
//!
//! Documents are emitted through `serde_json::Value`, whose object map keeps
//! keys sorted, so equal networks always produce identical bytes. Parsing
//! walks the value by hand to report schema problems with a JSON path.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use serde_json::{json, Map, Value};

use super::{CostVector, Layer, LayerKind, Network, NetworkError};
use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IrFormatError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
}

fn schema(path: &str, message: impl Into<String>) -> IrFormatError {
    IrFormatError::SchemaViolation {
        path: path.to_string(),
        message: message.into(),
    }
}

pub(crate) fn spatial_to_value(r: &Rational) -> Value {
    let num = r.numer().to_i64().map(Value::from).unwrap_or(Value::Null);
    let den = r.denom().to_i64().map(Value::from).unwrap_or(Value::Null);
    json!({ "num": num, "den": den })
}

pub(crate) fn cost_to_value(c: &CostVector) -> Value {
    let lat: Map<String, Value> = c
        .latency_us
        .iter()
        .map(|(k, v)| (k.clone(), Value::String(v.to_string())))
        .collect();
    json!({ "flops": c.flops, "params": c.params, "latency_us": lat })
}

pub(crate) fn layer_to_value(l: &Layer) -> Value {
    json!({
        "id": l.id,
        "kind": l.kind.as_str(),
        "in_channels": l.in_channels,
        "out_channels": l.out_channels,
        "spatial_change": spatial_to_value(&l.spatial_change),
        "cost": cost_to_value(&l.cost),
    })
}

pub(crate) fn edges_to_value<'a>(edges: impl IntoIterator<Item = &'a (String, String)>) -> Value {
    Value::Array(edges.into_iter().map(|(s, d)| json!([s, d])).collect())
}

pub(crate) fn network_to_value(net: &Network) -> Value {
    json!({
        "name": net.name(),
        "layers": net.layers().iter().map(layer_to_value).collect::<Vec<_>>(),
        "edges": edges_to_value(net.edges()),
        "inputs": net.inputs(),
        "outputs": net.outputs(),
    })
}

/// Canonical pretty-printed bytes, newline terminated.
pub(crate) fn to_canonical_bytes(v: &Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("values always serialize");
    out.push(b'\n');
    out
}

pub fn serialize_network(net: &Network) -> Vec<u8> {
    to_canonical_bytes(&network_to_value(net))
}

pub fn parse_network(bytes: &[u8]) -> Result<Network, IrFormatError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| IrFormatError::MalformedDocument(format!("not UTF-8: {e}")))?;
    let v: Value = serde_json::from_str(text)
        .map_err(|e| IrFormatError::MalformedDocument(e.to_string()))?;
    network_from_value(&v, "$")
}

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, IrFormatError> {
    v.as_object().ok_or_else(|| schema(path, "expected object"))
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value, IrFormatError> {
    obj.get(key)
        .ok_or_else(|| schema(&format!("{path}.{key}"), "missing field"))
}

fn string(v: &Value, path: &str) -> Result<String, IrFormatError> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| schema(path, "expected string"))
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, IrFormatError> {
    v.as_array().ok_or_else(|| schema(path, "expected array"))
}

fn uint(v: &Value, path: &str) -> Result<u64, IrFormatError> {
    v.as_u64()
        .ok_or_else(|| schema(path, "expected non-negative integer"))
}

fn int(v: &Value, path: &str) -> Result<i64, IrFormatError> {
    v.as_i64().ok_or_else(|| schema(path, "expected integer"))
}

fn rational(v: &Value, path: &str) -> Result<Rational, IrFormatError> {
    let s = v
        .as_str()
        .ok_or_else(|| schema(path, "expected rational string \"p/q\""))?;
    s.parse().map_err(|e: crate::rational::ParseRationalError| schema(path, e.to_string()))
}

pub(crate) fn spatial_from_value(v: &Value, path: &str) -> Result<Rational, IrFormatError> {
    let o = object(v, path)?;
    let num = int(field(o, "num", path)?, &format!("{path}.num"))?;
    let den = int(field(o, "den", path)?, &format!("{path}.den"))?;
    if den == 0 {
        return Err(schema(&format!("{path}.den"), "zero denominator"));
    }
    Ok(Rational::from_integer(BigInt::from(num)) / Rational::from_integer(BigInt::from(den)))
}

pub(crate) fn cost_from_value(v: &Value, path: &str) -> Result<CostVector, IrFormatError> {
    let o = object(v, path)?;
    let flops = uint(field(o, "flops", path)?, &format!("{path}.flops"))?;
    let params = uint(field(o, "params", path)?, &format!("{path}.params"))?;
    let mut latency_us = BTreeMap::new();
    if let Some(lat) = o.get("latency_us") {
        let lpath = format!("{path}.latency_us");
        for (dev, val) in object(lat, &lpath)? {
            let vpath = format!("{lpath}.{dev}");
            if dev.is_empty() {
                return Err(schema(&vpath, "empty device name"));
            }
            latency_us.insert(dev.clone(), rational(val, &vpath)?);
        }
    }
    Ok(CostVector {
        flops,
        params,
        latency_us,
    })
}

fn channels(v: &Value, path: &str) -> Result<u32, IrFormatError> {
    let c = uint(v, path)?;
    u32::try_from(c).map_err(|_| schema(path, "channel count out of range"))
}

pub(crate) fn layer_from_value(v: &Value, path: &str) -> Result<Layer, IrFormatError> {
    let o = object(v, path)?;
    let kpath = format!("{path}.kind");
    let kind: LayerKind = string(field(o, "kind", path)?, &kpath)?
        .parse()
        .map_err(|e: String| schema(&kpath, e))?;
    Ok(Layer {
        id: string(field(o, "id", path)?, &format!("{path}.id"))?,
        kind,
        in_channels: channels(field(o, "in_channels", path)?, &format!("{path}.in_channels"))?,
        out_channels: channels(field(o, "out_channels", path)?, &format!("{path}.out_channels"))?,
        spatial_change: spatial_from_value(
            field(o, "spatial_change", path)?,
            &format!("{path}.spatial_change"),
        )?,
        cost: cost_from_value(field(o, "cost", path)?, &format!("{path}.cost"))?,
    })
}

pub(crate) fn layers_from_value(v: &Value, path: &str) -> Result<Vec<Layer>, IrFormatError> {
    array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, l)| layer_from_value(l, &format!("{path}[{i}]")))
        .collect()
}

pub(crate) fn edges_from_value(v: &Value, path: &str) -> Result<Vec<(String, String)>, IrFormatError> {
    let mut edges = Vec::new();
    for (i, e) in array(v, path)?.iter().enumerate() {
        let epath = format!("{path}[{i}]");
        let pair = array(e, &epath)?;
        if pair.len() != 2 {
            return Err(schema(&epath, "edge must be [src, dst]"));
        }
        edges.push((
            string(&pair[0], &format!("{epath}[0]"))?,
            string(&pair[1], &format!("{epath}[1]"))?,
        ));
    }
    Ok(edges)
}

fn id_list(v: &Value, path: &str) -> Result<Vec<String>, IrFormatError> {
    array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, s)| string(s, &format!("{path}[{i}]")))
        .collect()
}

pub(crate) fn network_from_value(v: &Value, path: &str) -> Result<Network, IrFormatError> {
    let o = object(v, path)?;
    let name = string(field(o, "name", path)?, &format!("{path}.name"))?;
    let lpath = format!("{path}.layers");
    let layers = layers_from_value(field(o, "layers", path)?, &lpath)?;
    let edges = edges_from_value(field(o, "edges", path)?, &format!("{path}.edges"))?;
    let inputs = id_list(field(o, "inputs", path)?, &format!("{path}.inputs"))?;
    let outputs = id_list(field(o, "outputs", path)?, &format!("{path}.outputs"))?;
    let dup_pos = |id: &str| layers.iter().rposition(|l| l.id == id).unwrap_or(0);
    Network::new(name, layers.clone(), edges, inputs, outputs).map_err(|e| match e {
        NetworkError::DuplicateLayer(id) => {
            schema(&format!("{lpath}[{}].id", dup_pos(&id)), format!("duplicate layer id `{id}`"))
        }
    })
}

/// `#[serde(with)]` adapter for `{"num","den"}` spatial ratios.
pub(crate) mod spatial_serde {
    use super::*;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        spatial_to_value(r).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let v = Value::deserialize(d)?;
        spatial_from_value(&v, "spatial_change").map_err(D::Error::custom)
    }
}

/// `#[serde(with)]` adapter for cost vectors.
pub(crate) mod cost_serde {
    use super::*;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(c: &CostVector, s: S) -> Result<S::Ok, S::Error> {
        cost_to_value(c).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CostVector, D::Error> {
        let v = Value::deserialize(d)?;
        cost_from_value(&v, "cost").map_err(D::Error::custom)
    }
}

/// `#[serde(with)]` adapter for whole networks embedded in other documents.
pub(crate) mod network_serde {
    use super::*;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(n: &Network, s: S) -> Result<S::Ok, S::Error> {
        network_to_value(n).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Network, D::Error> {
        let v = Value::deserialize(d)?;
        network_from_value(&v, "$.teacher").map_err(D::Error::custom)
    }
}

/// `#[serde(with)]` adapter for layer lists.
pub(crate) mod layers_serde {
    use super::*;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ls: &[Layer], s: S) -> Result<S::Ok, S::Error> {
        Value::Array(ls.iter().map(layer_to_value).collect()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Layer>, D::Error> {
        let v = Value::deserialize(d)?;
        layers_from_value(&v, "layers").map_err(D::Error::custom)
    }
}
