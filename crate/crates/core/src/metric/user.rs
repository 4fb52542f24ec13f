//! User metrics given as polynomial-trigonometric coefficient tables.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "k": 2,
//!   "terms": [
//!     { "row": 2, "col": 2, "coef": 0.01, "powers": [2, 0], "mode": 1, "trig": "cos" }
//!   ]
//! }
//! ```
//!
//! The metric is `g0` plus, for every term, `coef * z^powers * trig(mode x)`
//! added to entries `(row, col)` and `(col, row)` (once on the diagonal).
//! Index `k` is the fiber coordinate `x`.

use serde::{Deserialize, Serialize};

use crate::error::{QpmcError, Result};
use crate::jet::Scalar;

pub const USER_METRIC_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trig {
    Cos,
    Sin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserTerm {
    pub row: usize,
    pub col: usize,
    pub coef: f64,
    #[serde(default)]
    pub powers: Vec<u32>,
    #[serde(default)]
    pub mode: u32,
    #[serde(default = "default_trig")]
    pub trig: Trig,
}

fn default_trig() -> Trig {
    Trig::Cos
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserMetric {
    pub schema_version: u32,
    pub k: usize,
    pub terms: Vec<UserTerm>,
}

impl UserMetric {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: UserMetric = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != USER_METRIC_SCHEMA {
            return Err(QpmcError::param(
                "schema_version",
                format!("expected {USER_METRIC_SCHEMA}, got {}", self.schema_version),
            ));
        }
        if self.k == 0 || self.k + 1 > crate::jet::MAX_DIM {
            return Err(QpmcError::param("k", "must be in 1..=3"));
        }
        for (i, t) in self.terms.iter().enumerate() {
            if t.row > self.k || t.col > self.k {
                return Err(QpmcError::param(
                    "terms",
                    format!("term {i}: index out of range"),
                ));
            }
            if t.powers.len() > self.k {
                return Err(QpmcError::param(
                    "terms",
                    format!("term {i}: more powers than z-coordinates"),
                ));
            }
            if !t.coef.is_finite() {
                return Err(QpmcError::param("terms", format!("term {i}: non-finite coef")));
            }
        }
        Ok(())
    }

    pub(crate) fn add_to<S: Scalar>(&self, p: &[S], g: &mut [S]) {
        let n = self.k + 1;
        let x = p[self.k];
        for t in &self.terms {
            let mut v = S::cst(t.coef);
            for (a, &e) in t.powers.iter().enumerate() {
                v *= p[a].powi(e);
            }
            let arg = x * t.mode as f64;
            v *= match t.trig {
                Trig::Cos => arg.cos(),
                Trig::Sin => arg.sin(),
            };
            g[t.row * n + t.col] += v;
            if t.row != t.col {
                g[t.col * n + t.row] += v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys_and_bad_indices() {
        let bad = r#"{"schema_version":1,"k":1,"terms":[],"extra":3}"#;
        assert!(UserMetric::from_json(bad).is_err());
        let bad = r#"{"schema_version":1,"k":1,"terms":[{"row":2,"col":0,"coef":1.0}]}"#;
        assert!(UserMetric::from_json(bad).is_err());
    }

    #[test]
    fn symmetric_contribution() {
        let m = UserMetric::from_json(
            r#"{"schema_version":1,"k":1,"terms":[{"row":0,"col":1,"coef":0.5,"powers":[1],"mode":1,"trig":"sin"}]}"#,
        )
        .unwrap();
        let mut g = vec![0.0; 4];
        m.add_to(&[2.0, std::f64::consts::FRAC_PI_2], &mut g);
        assert!((g[1] - 1.0).abs() < 1e-15);
        assert_eq!(g[1], g[2]);
        assert_eq!(g[0], 0.0);
    }
}
