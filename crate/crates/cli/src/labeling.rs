//! JSON labeling documents: match id to plane label, `-1` for outliers.

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const FORMAT: &str = "planemerge-labeling";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub id: u64,
    pub label: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelingDoc {
    pub format: String,
    pub version: u32,
    pub labels: Vec<Entry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Value>,
}

impl LabelingDoc {
    pub fn new(ids: impl IntoIterator<Item = u64>, labels: &[Option<usize>]) -> Self {
        let labels = ids
            .into_iter()
            .zip(labels)
            .map(|(id, l)| Entry {
                id,
                label: l.map_or(-1, |l| l as i64),
            })
            .collect();
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            labels,
            diagnostics: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let head: Value = serde_json::from_str(text).map_err(|e| format!("labeling is not valid JSON: {e}"))?;
        if head.get("format").and_then(Value::as_str) != Some(FORMAT) {
            return Err(format!("labeling document must have format \"{FORMAT}\""));
        }
        match head.get("version").and_then(Value::as_u64) {
            Some(v) if v == u64::from(VERSION) => {}
            Some(v) => {
                return Err(format!(
                    "unsupported labeling version {v}; this reader understands version {VERSION} only"
                ))
            }
            None => return Err("labeling document has no version".to_string()),
        }
        let doc: LabelingDoc = serde_json::from_value(head).map_err(|e| format!("malformed labeling: {e}"))?;
        let mut seen = std::collections::HashSet::new();
        for e in &doc.labels {
            if e.label < -1 {
                return Err(format!("label {} of id {} is below -1", e.label, e.id));
            }
            if !seen.insert(e.id) {
                return Err(format!("duplicate id {} in labeling", e.id));
            }
        }
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("labeling serializes");
        s.push('\n');
        s
    }

    /// Labels in the order of `ids`; every id must be present exactly once.
    pub fn aligned(&self, ids: &[u64]) -> Result<Vec<Option<usize>>, String> {
        if self.labels.len() != ids.len() {
            return Err(format!(
                "labeling has {} ids but the match file has {}",
                self.labels.len(),
                ids.len()
            ));
        }
        let by_id: std::collections::HashMap<u64, i64> = self.labels.iter().map(|e| (e.id, e.label)).collect();
        ids.iter()
            .map(|id| match by_id.get(id) {
                Some(&l) => Ok(usize::try_from(l).ok()),
                None => Err(format!("id {id} of the match file is missing from the labeling")),
            })
            .collect()
    }
}
