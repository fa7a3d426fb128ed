//! JSON documents: task graphs, trained models and threshold tables.

use std::collections::BTreeMap;
use std::path::Path;

use amnar_core::dataset::ClusterCenters;
use amnar_core::detector::ThresholdTable;
use amnar_core::graph::TaskGraph;
use amnar_core::rrb::{RrbConfig, RrbModel, RrbParams};
use amnar_core::ClassId;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Record {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn check_version(path: &Path, version: u32) -> Result<()> {
    if version == FORMAT_VERSION {
        Ok(())
    } else {
        Err(Error::invalid(path, format!("format_version: unsupported value {version}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub format_version: u32,
    pub num_classes: usize,
    pub start_node: ClassId,
    pub edges: Vec<[ClassId; 2]>,
}

impl From<&TaskGraph> for GraphFile {
    fn from(g: &TaskGraph) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            num_classes: g.num_classes(),
            start_node: g.start_node(),
            edges: g.edges().map(|(u, v)| [u, v]).collect(),
        }
    }
}

impl GraphFile {
    pub fn to_graph(&self) -> amnar_core::Result<TaskGraph> {
        if self.start_node as usize != self.num_classes {
            return Err(amnar_core::Error::Config(format!(
                "start_node must equal num_classes ({}), got {}",
                self.num_classes, self.start_node
            )));
        }
        TaskGraph::from_edges(self.num_classes, self.edges.iter().map(|&[u, v]| (u, v)))
    }
}

pub fn save_graph(path: &Path, g: &TaskGraph) -> Result<()> {
    write_json(path, &GraphFile::from(g))
}

pub fn load_graph(path: &Path) -> Result<TaskGraph> {
    let file: GraphFile = read_json(path)?;
    check_version(path, file.format_version)?;
    file.to_graph().map_err(|e| Error::invalid(path, e.to_string()))
}

/// Model document. Tensors are stored as nested arrays following their
/// shapes, keyed by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub config: RrbConfig,
    pub centers: BTreeMap<ClassId, Vec<f64>>,
    #[serde(default)]
    pub counts: BTreeMap<ClassId, usize>,
    pub params: BTreeMap<String, Value>,
}

fn nest(values: &[f64], shape: &[usize]) -> Value {
    match shape {
        [] | [_] => Value::from(values.to_vec()),
        [n, rest @ ..] => {
            let stride = values.len() / n.max(&1);
            Value::Array((0..*n).map(|i| nest(&values[i * stride..(i + 1) * stride], rest)).collect())
        }
    }
}

fn flatten(value: &Value, shape: &[usize], out: &mut Vec<f64>) -> std::result::Result<(), String> {
    let Some((&n, rest)) = shape.split_first() else {
        return Err("tensor has no shape".into());
    };
    let items = value.as_array().ok_or("expected an array")?;
    if items.len() != n {
        return Err(format!("expected {n} entries, found {}", items.len()));
    }
    for item in items {
        if rest.is_empty() {
            out.push(item.as_f64().ok_or_else(|| format!("expected a number, found {item}"))?);
        } else {
            flatten(item, rest, out)?;
        }
    }
    Ok(())
}

impl From<&RrbModel> for ModelFile {
    fn from(model: &RrbModel) -> Self {
        let config = *model.config();
        let params = RrbParams::specs(&config)
            .into_iter()
            .zip(model.params.tensors())
            .map(|(spec, t)| (spec.name, nest(t, &spec.shape)))
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            config,
            centers: model.centers.centers.clone(),
            counts: model.centers.counts.clone(),
            params,
        }
    }
}

impl ModelFile {
    pub fn to_model(&self) -> std::result::Result<RrbModel, String> {
        self.config.validate().map_err(|e| format!("config: {e}"))?;
        let specs = RrbParams::specs(&self.config);
        if let Some(extra) = self.params.keys().find(|k| !specs.iter().any(|s| &s.name == *k)) {
            return Err(format!("params.{extra}: unknown tensor"));
        }
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in &specs {
            let value = self.params.get(&spec.name).ok_or_else(|| format!("params.{}: missing tensor", spec.name))?;
            let mut flat = Vec::with_capacity(spec.len());
            flatten(value, &spec.shape, &mut flat).map_err(|e| format!("params.{}: {e}", spec.name))?;
            tensors.push(flat);
        }
        let params = RrbParams::from_tensors(self.config, tensors).map_err(|e| e.to_string())?;
        for (class, c) in &self.centers {
            if c.len() != self.config.dim {
                return Err(format!("centers.{class}: expected {} values, found {}", self.config.dim, c.len()));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(format!("centers.{class}: non-finite value"));
            }
        }
        let counts =
            if self.counts.is_empty() { self.centers.keys().map(|&c| (c, 1)).collect() } else { self.counts.clone() };
        Ok(RrbModel { params, centers: ClusterCenters { centers: self.centers.clone(), counts } })
    }
}

pub fn save_model(path: &Path, model: &RrbModel) -> Result<()> {
    write_json(path, &ModelFile::from(model))
}

pub fn load_model(path: &Path) -> Result<RrbModel> {
    let file: ModelFile = read_json(path)?;
    check_version(path, file.format_version)?;
    file.to_model().map_err(|e| Error::invalid(path, e))
}

pub fn save_thresholds(path: &Path, table: &ThresholdTable) -> Result<()> {
    write_json(path, table)
}

pub fn load_thresholds(path: &Path) -> Result<ThresholdTable> {
    let table: ThresholdTable = read_json(path)?;
    if !(table.q > 0.0 && table.q < 1.0) {
        return Err(Error::invalid(path, format!("q: must lie in (0, 1), got {}", table.q)));
    }
    if let Some((class, theta)) = table.thresholds.iter().find(|(_, t)| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::invalid(path, format!("thresholds.{class}: invalid value {theta}")));
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_document_layout() {
        let g = TaskGraph::from_edges(3, [(3, 0), (0, 2), (0, 1)]).unwrap();
        let json = serde_json::to_string(&GraphFile::from(&g)).unwrap();
        assert_eq!(json, r#"{"format_version":1,"num_classes":3,"start_node":3,"edges":[[0,1],[0,2],[3,0]]}"#);
    }

    #[test]
    fn graph_rejects_bad_start_and_cycles() {
        let bad_start = GraphFile { format_version: 1, num_classes: 2, start_node: 5, edges: vec![] };
        assert!(bad_start.to_graph().is_err());
        let cyclic = GraphFile { format_version: 1, num_classes: 2, start_node: 2, edges: vec![[0, 1], [1, 0]] };
        assert!(cyclic.to_graph().is_err());
    }

    #[test]
    fn nested_tensors_follow_shape() {
        let v = nest(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]);
        assert_eq!(v, serde_json::json!([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]));
        let mut flat = Vec::new();
        flatten(&v, &[3, 2], &mut flat).unwrap();
        assert_eq!(flat, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(flatten(&v, &[2, 3], &mut Vec::new()).is_err());
    }
}
