//! Constellation files: JSON with complex entries as `[re, im]` pairs in row-major nested arrays.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::model::{ChannelConfig, JointConstellation, UserConstellation};

pub const SCHEMA_VERSION: u64 = 1;
/// Receive antennas assumed when a file does not say.
pub const DEFAULT_N: usize = 4;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criterion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema { pointer: pointer.into(), message: message.into() }
}

fn matrix_json(x: &CMat) -> Value {
    Value::Array(
        (0..x.nrows())
            .map(|i| Value::Array((0..x.ncols()).map(|j| json!([x[(i, j)].re, x[(i, j)].im])).collect()))
            .collect(),
    )
}

pub fn to_json(c: &JointConstellation, meta: &Metadata) -> Result<Value> {
    for (k, u) in c.users().iter().enumerate() {
        if u.symbols().iter().any(|s| s.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
            return Err(Error::NonFinite(format!("user {k} has a non-finite entry")));
        }
    }
    let users: Vec<Value> =
        c.users().iter().map(|u| Value::Array(u.symbols().iter().map(matrix_json).collect())).collect();
    let bits: Vec<f64> = c.sizes().iter().map(|&s| (s as f64).log2()).collect();
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "T": c.t(),
        "K": c.k(),
        "M": c.config().m,
        "powers": c.powers(),
        "bits": bits,
        "users": users,
        "metadata": serde_json::to_value(meta)?,
    }))
}

pub fn save_constellation(path: &Path, c: &JointConstellation, meta: &Metadata) -> Result<()> {
    let mut s = serde_json::to_string(&to_json(c, meta)?)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| schema(format!("/{key}"), "missing field"))
}

fn as_usize(v: &Value, ptr: &str) -> Result<usize> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| schema(ptr, "expected a non-negative integer"))
}

fn as_f64(v: &Value, ptr: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| schema(ptr, "expected a number"))
}

fn as_array<'a>(v: &'a Value, ptr: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| schema(ptr, "expected an array"))
}

fn parse_matrix(v: &Value, ptr: &str, t: usize, m: usize) -> Result<CMat> {
    let rows = as_array(v, ptr)?;
    if rows.len() != t {
        return Err(schema(ptr, format!("expected {t} rows, found {}", rows.len())));
    }
    let mut x = CMat::zeros(t, m);
    for (i, row) in rows.iter().enumerate() {
        let rp = format!("{ptr}/{i}");
        let cols = as_array(row, &rp)?;
        if cols.len() != m {
            return Err(schema(&rp, format!("expected {m} entries, found {}", cols.len())));
        }
        for (j, z) in cols.iter().enumerate() {
            let zp = format!("{rp}/{j}");
            let pair = as_array(z, &zp)?;
            if pair.len() != 2 {
                return Err(schema(&zp, "expected a [re, im] pair"));
            }
            x[(i, j)] = C64::new(as_f64(&pair[0], &format!("{zp}/0"))?, as_f64(&pair[1], &format!("{zp}/1"))?);
        }
    }
    Ok(x)
}

/// Parses and validates a constellation document; the first violation is reported.
pub fn from_json(v: &Value) -> Result<(JointConstellation, Metadata)> {
    let obj = v.as_object().ok_or_else(|| schema("", "expected an object"))?;
    let version = as_usize(field(obj, "schema_version")?, "/schema_version")?;
    if version as u64 != SCHEMA_VERSION {
        return Err(schema("/schema_version", format!("unsupported version {version}")));
    }
    let t = as_usize(field(obj, "T")?, "/T")?;
    let k = as_usize(field(obj, "K")?, "/K")?;
    let m: Vec<usize> = as_array(field(obj, "M")?, "/M")?
        .iter()
        .enumerate()
        .map(|(i, x)| as_usize(x, &format!("/M/{i}")))
        .collect::<Result<_>>()?;
    let powers: Vec<f64> = as_array(field(obj, "powers")?, "/powers")?
        .iter()
        .enumerate()
        .map(|(i, x)| as_f64(x, &format!("/powers/{i}")))
        .collect::<Result<_>>()?;
    let bits: Vec<f64> = as_array(field(obj, "bits")?, "/bits")?
        .iter()
        .enumerate()
        .map(|(i, x)| as_f64(x, &format!("/bits/{i}")))
        .collect::<Result<_>>()?;
    let users_v = as_array(field(obj, "users")?, "/users")?;
    for (name, len) in [("M", m.len()), ("powers", powers.len()), ("bits", bits.len()), ("users", users_v.len())] {
        if len != k {
            return Err(schema(format!("/{name}"), format!("expected {k} entries, found {len}")));
        }
    }
    let meta: Metadata = match obj.get("metadata") {
        None | Some(Value::Null) => Metadata::default(),
        Some(m) => serde_json::from_value(m.clone()).map_err(|e| schema("/metadata", e.to_string()))?,
    };
    let mut users = Vec::with_capacity(k);
    for (ki, uv) in users_v.iter().enumerate() {
        let up = format!("/users/{ki}");
        let syms = as_array(uv, &up)?
            .iter()
            .enumerate()
            .map(|(i, s)| parse_matrix(s, &format!("{up}/{i}"), t, m[ki]))
            .collect::<Result<Vec<_>>>()?;
        let expect = bits[ki].exp2();
        if (expect - syms.len() as f64).abs() > 1e-9 * expect.max(1.0) {
            return Err(Error::Validation(format!("user {ki}: {} symbols but bits = {}", syms.len(), bits[ki])));
        }
        let u = UserConstellation::new(syms, powers[ki]).map_err(|e| Error::Validation(format!("user {ki}: {e}")))?;
        users.push(u);
    }
    let budget = powers.iter().copied().fold(0.0, f64::max);
    let config = ChannelConfig::new(t, m, meta.n.unwrap_or(DEFAULT_N), budget)?;
    Ok((JointConstellation::new(config, users)?, meta))
}

pub fn load_constellation(path: &Path) -> Result<(JointConstellation, Metadata)> {
    let text = fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    from_json(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> JointConstellation {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let users = vec![
            UserConstellation::from_symbols((0..4).map(|_| linalg::cgauss(3, 1, &mut r)).collect()).unwrap(),
            UserConstellation::from_symbols((0..2).map(|_| linalg::cgauss(3, 2, &mut r)).collect()).unwrap(),
        ];
        JointConstellation::from_users(3, 2, users).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let meta = Metadata { criterion: Some("J:0.5".into()), snr_db: Some(30.0), seed: Some(7), n: Some(2) };
        save_constellation(&p, &c, &meta).unwrap();
        let (back, m2) = load_constellation(&p).unwrap();
        assert_eq!(back, c);
        assert_eq!(m2, meta);
    }

    #[test]
    fn power_mismatch_names_user() {
        let c = sample();
        let mut v = to_json(&c, &Metadata::default()).unwrap();
        let p = v["powers"][1].as_f64().unwrap();
        v["powers"][1] = json!(p * 1.01);
        let err = from_json(&v).unwrap_err().to_string();
        assert!(err.contains("user 1"), "{err}");
    }

    #[test]
    fn missing_field_has_pointer() {
        let c = sample();
        let mut v = to_json(&c, &Metadata::default()).unwrap();
        v.as_object_mut().unwrap().remove("powers");
        match from_json(&v).unwrap_err() {
            Error::Schema { pointer, .. } => assert_eq!(pointer, "/powers"),
            e => panic!("{e}"),
        }
        let mut v = to_json(&c, &Metadata::default()).unwrap();
        v["users"][0][2][1] = json!([1.0]);
        match from_json(&v).unwrap_err() {
            Error::Schema { pointer, .. } => assert_eq!(pointer, "/users/0/2/1/0"),
            e => panic!("{e}"),
        }
    }
}
