//! Text specifications of metrics.
//!
//! ```text
//! spec   := part ('+' part)*
//! part   := name (':' key '=' value (',' key '=' value)*)?
//!         | 'file:' path
//! value  := number (';' number)*
//! ```
//!
//! | family    | keys (defaults)                                       |
//! |-----------|-------------------------------------------------------|
//! | `product` | `k` (2)                                               |
//! | `warped`  | `scale` (1); `dz^2 + cosh(scale z)^2 dx^2`, k = 1     |
//! | `bump`    | `eps` (0.01), `center` (origin), `width` (1), `seed` (0), `k` (2) |
//! | `twisted` | `alpha` (0.2), `wobble` (0); rotation angle `alpha x / 2pi + wobble sin x`, k = 2 |
//!
//! Parts joined by `+` add their deviations from the product metric and
//! must agree on `k`. `file:` loads a [`UserMetric`] JSON document.
//! `berger` is a curvature-only family (see [`super::berger`]) and is
//! rejected here.

use std::collections::BTreeMap;

use super::{BumpPerturbation, MetricField, MetricKind, UserMetric};
use crate::error::{QpmcError, Result};
use crate::jet::MAX_DIM;

pub const DEFAULT_K: usize = 2;

/// One catalog line per family, for `examples`-style listings.
pub const CATALOG: &[(&str, &str)] = &[
    ("product", "product:k=2  flat metric dz.dz + dx^2"),
    ("warped", "warped:scale=1  dz^2 + cosh(scale z)^2 dx^2 on R x S^1"),
    (
        "bump",
        "bump:eps=0.01,center=0;0,width=1,seed=7  compactly supported seeded perturbation",
    ),
    (
        "twisted",
        "twisted:alpha=0.2,wobble=0  rotation pullback with normal holonomy alpha (k = 2)",
    ),
    ("file", "file:metric.json  polynomial/trigonometric coefficient tables"),
    (
        "berger",
        "berger:kappa=0.5  left-invariant metric on SU(2); curvature checks only",
    ),
];

enum Value {
    Scalar(f64),
    List(Vec<f64>),
}

struct Part {
    kind: MetricKind,
    k: Option<usize>,
    canonical: String,
}

fn parse_number(key: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| QpmcError::param(key, format!("`{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(QpmcError::param(key, "must be finite"));
    }
    Ok(v)
}

fn parse_params(name: &str, body: &str) -> Result<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    for item in body.split(',').filter(|s| !s.trim().is_empty()) {
        let (key, val) = item.split_once('=').ok_or_else(|| {
            QpmcError::param(name, format!("expected key=value, got `{}`", item.trim()))
        })?;
        let key = key.trim().to_string();
        let value = if val.contains(';') {
            Value::List(
                val.split(';')
                    .map(|s| parse_number(&key, s))
                    .collect::<Result<_>>()?,
            )
        } else {
            Value::Scalar(parse_number(&key, val)?)
        };
        if out.insert(key.clone(), value).is_some() {
            return Err(QpmcError::param(&key, "given twice"));
        }
    }
    Ok(out)
}

struct Params {
    family: String,
    map: BTreeMap<String, Value>,
}

impl Params {
    fn scalar(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(Value::Scalar(v)) => Ok(v),
            Some(Value::List(_)) => Err(QpmcError::param(key, "expected a single number")),
        }
    }

    fn list(&mut self, key: &str) -> Option<Vec<f64>> {
        self.map.remove(key).map(|v| match v {
            Value::Scalar(s) => vec![s],
            Value::List(l) => l,
        })
    }

    fn integer(&mut self, key: &str) -> Result<Option<u64>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(Value::Scalar(v)) if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(53) => {
                Ok(Some(v as u64))
            }
            Some(_) => Err(QpmcError::param(key, "expected a non-negative integer")),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.map.keys().next() {
            return Err(QpmcError::param(
                key,
                format!("unknown key for `{}`", self.family),
            ));
        }
        Ok(())
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn parse_part(text: &str, k_hint: usize) -> Result<Part> {
    let text = text.trim();
    let (name, body) = match text.split_once(':') {
        Some((n, b)) => (n.trim(), b),
        None => (text, ""),
    };
    if name == "file" {
        let path = body.trim();
        let src = std::fs::read_to_string(path).map_err(|e| {
            QpmcError::InvalidInput(format!("cannot read metric file `{path}`: {e}"))
        })?;
        let user = UserMetric::from_json(&src)?;
        return Ok(Part {
            k: Some(user.k),
            kind: MetricKind::User(user),
            canonical: format!("file:{path}"),
        });
    }
    let mut p = Params {
        family: name.to_string(),
        map: parse_params(name, body)?,
    };
    let part = match name {
        "product" => {
            let k = p.integer("k")?.map(|k| k as usize);
            let kk = k.unwrap_or(k_hint);
            Part {
                kind: MetricKind::Product,
                k,
                canonical: format!("product:k={kk}"),
            }
        }
        "warped" => {
            let scale = p.scalar("scale", 1.0)?;
            Part {
                kind: MetricKind::Warped { scale },
                k: Some(1),
                canonical: format!("warped:scale={scale}"),
            }
        }
        "bump" => {
            let eps = p.scalar("eps", 0.01)?;
            if eps < 0.0 {
                return Err(QpmcError::param("eps", "must be non-negative"));
            }
            let width = p.scalar("width", 1.0)?;
            if width <= 0.0 {
                return Err(QpmcError::param("width", "must be positive"));
            }
            let seed = p.integer("seed")?.unwrap_or(0);
            let k_given = p.integer("k")?.map(|k| k as usize);
            let center = p.list("center");
            let k = k_given.or(center.as_ref().map(|c| c.len()));
            let kk = k.unwrap_or(k_hint);
            if kk == 0 || kk + 1 > MAX_DIM {
                return Err(QpmcError::param("k", format!("must be in 1..={}", MAX_DIM - 1)));
            }
            let center = center.unwrap_or_else(|| vec![0.0; kk]);
            if center.len() != kk {
                return Err(QpmcError::param(
                    "center",
                    format!("expected {kk} coordinates, got {}", center.len()),
                ));
            }
            let canonical = format!(
                "bump:eps={eps},center={},width={width},seed={seed},k={kk}",
                join(&center)
            );
            Part {
                kind: MetricKind::Bump(BumpPerturbation::new(kk, eps, center, width, seed)),
                k: Some(kk),
                canonical,
            }
        }
        "twisted" => {
            let alpha = p.scalar("alpha", 0.2)?;
            let wobble = p.scalar("wobble", 0.0)?;
            Part {
                kind: MetricKind::Twisted { alpha, wobble },
                k: Some(2),
                canonical: format!("twisted:alpha={alpha},wobble={wobble}"),
            }
        }
        "berger" | "berger_pullback" => {
            return Err(QpmcError::param(
                name,
                "Berger metrics live on SU(2) and are available for curvature checks only",
            ))
        }
        _ => return Err(QpmcError::UnknownMetric(name.to_string())),
    };
    p.finish()?;
    Ok(part)
}

pub fn parse_metric(text: &str) -> Result<MetricField> {
    if text.trim().is_empty() {
        return Err(QpmcError::UnknownMetric(String::new()));
    }
    let pieces: Vec<&str> = text.split('+').collect();
    // First pass fixes k from whichever part pins it.
    let mut k = None;
    for piece in &pieces {
        if let Some(pk) = parse_part(piece, DEFAULT_K)?.k {
            match k {
                None => k = Some(pk),
                Some(prev) if prev != pk => {
                    return Err(QpmcError::param(
                        "k",
                        format!("composed parts disagree on k ({prev} vs {pk})"),
                    ))
                }
                _ => {}
            }
        }
    }
    let k = k.unwrap_or(DEFAULT_K);
    let mut parts = pieces
        .iter()
        .map(|p| parse_part(p, k))
        .collect::<Result<Vec<_>>>()?;
    let canonical = parts
        .iter()
        .map(|p| p.canonical.as_str())
        .collect::<Vec<_>>()
        .join("+");
    let kind = if parts.len() == 1 {
        parts.pop().unwrap().kind
    } else {
        MetricKind::Sum(parts.into_iter().map(|p| p.kind).collect())
    };
    MetricField::new(k, kind, canonical)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_builtins_with_defaults() {
        let m = parse_metric("product:k=3").unwrap();
        assert_eq!(m.k(), 3);
        let m = parse_metric("warped").unwrap();
        assert_eq!(m.k(), 1);
        assert_eq!(m.provenance(), "warped:scale=1");
        let m = parse_metric("bump:eps=0.01,seed=7").unwrap();
        assert_eq!(m.k(), 2);
        assert_eq!(m.provenance(), "bump:eps=0.01,center=0;0,width=1,seed=7,k=2");
    }

    #[test]
    fn composition_infers_k() {
        let m = parse_metric("twisted:alpha=0.2+bump:eps=0.01,center=0.5;0").unwrap();
        assert_eq!(m.k(), 2);
        assert!(matches!(m.kind(), MetricKind::Sum(v) if v.len() == 2));
        let m = parse_metric("bump:eps=0.01+product").unwrap();
        assert_eq!(m.k(), 2);
        assert!(parse_metric("warped+twisted").is_err());
    }

    #[test]
    fn rejects_malformed_specs() {
        assert!(matches!(
            parse_metric("sphere:r=1"),
            Err(QpmcError::UnknownMetric(_))
        ));
        assert!(parse_metric("bump:eps=-1").is_err());
        assert!(parse_metric("bump:eps=abc").is_err());
        assert!(parse_metric("bump:eps").is_err());
        assert!(parse_metric("bump:radius=3").is_err());
        assert!(parse_metric("bump:width=0").is_err());
        assert!(parse_metric("bump:seed=1.5").is_err());
        assert!(parse_metric("bump:eps=0.1,eps=0.2").is_err());
        assert!(parse_metric("product:k=4").is_err());
        assert!(parse_metric("berger:kappa=0.5").is_err());
        assert!(parse_metric("").is_err());
    }

    #[test]
    fn loads_user_metric_files() {
        let dir = std::env::temp_dir().join(format!("qpmc-spec-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.json");
        std::fs::write(
            &path,
            r#"{"schema_version":1,"k":1,"terms":[{"row":1,"col":1,"coef":0.1,"powers":[2]}]}"#,
        )
        .unwrap();
        let m = parse_metric(&format!("file:{}", path.display())).unwrap();
        let g = m.eval(&[0.5, 0.0]).unwrap();
        assert!((g.a[1][1] - 1.025).abs() < 1e-15);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
