//! JSON kernel specifications.
//!
//! ```json
//! {
//!   "alphabet": ["a", "b"],
//!   "root_law": {"a": 0.5, "b": 0.5},
//!   "kernel": {
//!     "form": "factored",
//!     "offspring_law": {"kind": "geometric", "q": 0.5},
//!     "transition": [[0.9, 0.1], [0.2, 0.8]]
//!   }
//! }
//! ```
//!
//! The explicit form lists configurations per parent label:
//! `{"form": "explicit", "laws": {"a": [{"children": ["a", "b"], "prob": 0.5}, ...]}}`.
//! Root law labels that are left out get probability zero.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::CountLaw;
use crate::model::{Alphabet, OffspringConfig, OffspringKernel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpecDocument {
    pub alphabet: Vec<String>,
    pub root_law: BTreeMap<String, f64>,
    pub kernel: KernelBody,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum KernelBody {
    Explicit { laws: BTreeMap<String, Vec<ConfigProb>> },
    Factored { offspring_law: CountLaw, transition: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigProb {
    pub children: Vec<String>,
    pub prob: f64,
}

/// A validated kernel specification.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub alphabet: Alphabet,
    pub kernel: OffspringKernel,
    pub root_law: Vec<f64>,
}

impl ModelSpec {
    /// Count law and transition matrix of a factored kernel.
    pub fn factors(&self) -> Option<(&CountLaw, &[Vec<f64>])> {
        match self.kernel.form() {
            crate::model::KernelForm::Factored { count, transition } => Some((count, transition)),
            _ => None,
        }
    }
}

impl KernelSpecDocument {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::validation(format!("kernel spec: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn build(&self) -> Result<ModelSpec> {
        let alphabet = Alphabet::new(self.alphabet.iter().cloned())?;
        let mut root_law = vec![0.0; alphabet.len()];
        for (label, &p) in &self.root_law {
            let i = alphabet.index_of(label)?;
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::validation(format!("root law entry '{label}' = {p} is not a probability")));
            }
            root_law[i] = p;
        }
        let total: f64 = root_law.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("root law sums to {total}, expected 1 within 1e-9")));
        }
        let kernel = match &self.kernel {
            KernelBody::Factored { offspring_law, transition } => {
                OffspringKernel::factored(alphabet.clone(), offspring_law.clone(), transition.clone())?
            }
            KernelBody::Explicit { laws } => {
                for label in laws.keys() {
                    alphabet.index_of(label)?;
                }
                let mut per_type = Vec::with_capacity(alphabet.len());
                for label in alphabet.symbols() {
                    let entries = laws
                        .get(label)
                        .ok_or_else(|| Error::validation(format!("explicit kernel has no law for type '{label}'")))?;
                    let mut law = Vec::with_capacity(entries.len());
                    for e in entries {
                        let labels: Vec<&str> = e.children.iter().map(String::as_str).collect();
                        law.push((OffspringConfig::from_labels(&alphabet, &labels)?, e.prob));
                    }
                    per_type.push(law);
                }
                OffspringKernel::explicit(alphabet.clone(), per_type)?
            }
        };
        Ok(ModelSpec { alphabet, kernel, root_law })
    }

    /// Factored specification document.
    pub fn factored(alphabet: &Alphabet, root_law: &[f64], law: CountLaw, transition: Vec<Vec<f64>>) -> Self {
        KernelSpecDocument {
            alphabet: alphabet.symbols().to_vec(),
            root_law: alphabet.symbols().iter().cloned().zip(root_law.iter().copied()).collect(),
            kernel: KernelBody::Factored { offspring_law: law, transition },
        }
    }
}

pub fn load_model(path: &Path) -> Result<ModelSpec> {
    KernelSpecDocument::read(path)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factored_round_trip() {
        let text = r#"{"alphabet":["a","b"],"root_law":{"a":0.5,"b":0.5},
            "kernel":{"form":"factored","offspring_law":{"kind":"geometric","q":0.5},
            "transition":[[0.9,0.1],[0.2,0.8]]}}"#;
        let doc = KernelSpecDocument::parse(text).unwrap();
        let m = doc.build().unwrap();
        assert_eq!(m.root_law, vec![0.5, 0.5]);
        let c = OffspringConfig::new(vec![0, 1]);
        assert!((m.kernel.prob(0, &c) - 0.125 * 0.9 * 0.1).abs() < 1e-15);
        let again = KernelSpecDocument::parse(&serde_json::to_string(&doc).unwrap()).unwrap();
        assert_eq!(again, doc);
    }

    #[test]
    fn explicit_form() {
        let text = r#"{"alphabet":["a"],"root_law":{"a":1},
            "kernel":{"form":"explicit","laws":{"a":[{"children":[],"prob":0.5},{"children":["a","a"],"prob":0.5}]}}}"#;
        let m = KernelSpecDocument::parse(text).unwrap().build().unwrap();
        assert_eq!(m.kernel.mean_matrix().unwrap().get(0, 0), 1.0);
    }

    #[test]
    fn bad_row_is_named() {
        let text = r#"{"alphabet":["a","b"],"root_law":{"a":1},
            "kernel":{"form":"factored","offspring_law":{"kind":"poisson","lambda":1},
            "transition":[[0.9,0.1],[0.3,0.8]]}}"#;
        let err = KernelSpecDocument::parse(text).unwrap().build().unwrap_err().to_string();
        assert!(err.contains("row 1") || err.contains("'b'"), "{err}");
    }

    #[test]
    fn root_law_must_sum_to_one() {
        let text = r#"{"alphabet":["a"],"root_law":{"a":0.9},
            "kernel":{"form":"factored","offspring_law":{"kind":"poisson","lambda":1},"transition":[[1]]}}"#;
        assert!(KernelSpecDocument::parse(text).unwrap().build().is_err());
    }
}
