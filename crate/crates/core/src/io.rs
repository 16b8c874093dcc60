//! JSON file formats.
//!
//! Every document carries `format_version` (currently 1). Ids in files are
//! 1-based and are converted to 0-based here and nowhere else.
//!
//! Network file:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "nodes": { "count": 2, "coordinates": [[0.0, 0.0], [1.0, 0.0]] },
//!   "links": [[1, 2], [2, 1]],
//!   "routes": [[1]],
//!   "communities": 1,
//!   "route_communities": [[1]]
//! }
//! ```
//!
//! Scenario file:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "scenarios": [ { "node_caps": [10, 10], "link_caps": [10, 10], "prob": 1.0 } ]
//! }
//! ```
//!
//! Both accept an optional free-form `provenance` object.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::fairsolver::{FlowSolution, SolveReport};
use crate::network::{Network, NetworkError};
use crate::riskmeasures::{RiskSpec, ScenarioSet};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: cannot write: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: field `{field}`: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("{path}: field `{field}`: {message}")]
    Invalid {
        path: String,
        field: String,
        message: String,
    },
    #[error("{path}: unsupported format_version {found} (this build reads {FORMAT_VERSION})")]
    Version { path: String, found: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodesSection {
    count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coordinates: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    format_version: u32,
    nodes: NodesSection,
    links: Vec<[usize; 2]>,
    routes: Vec<Vec<usize>>,
    communities: usize,
    route_communities: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioEntry {
    node_caps: Vec<f64>,
    link_caps: Vec<f64>,
    prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    format_version: u32,
    scenarios: Vec<ScenarioEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Value>,
}

fn parse_json<T: DeserializeOwned>(text: &str, path: &str) -> Result<T, IoError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let parsed: Result<T, _> = serde_path_to_error::deserialize(&mut de);
    let value = parsed.map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        IoError::Parse {
            path: path.to_string(),
            line: inner.line(),
            column: inner.column(),
            field: if field == "." { "(document)".into() } else { field },
            message: inner.to_string(),
        }
    })?;
    de.end().map_err(|e| IoError::Parse {
        path: path.to_string(),
        line: e.line(),
        column: e.column(),
        field: "(document)".into(),
        message: e.to_string(),
    })?;
    Ok(value)
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })
}

fn check_version(found: u32, path: &str) -> Result<(), IoError> {
    if found == FORMAT_VERSION {
        Ok(())
    } else {
        Err(IoError::Version {
            path: path.to_string(),
            found,
        })
    }
}

fn to_zero_based(id: usize, count: usize, what: &str, field: String, path: &str) -> Result<usize, IoError> {
    if id == 0 || id > count {
        return Err(IoError::Invalid {
            path: path.to_string(),
            field,
            message: format!("{what} id {id} outside 1..={count}"),
        });
    }
    Ok(id - 1)
}

/// A parsed network plus whatever provenance block the file carried.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDocument {
    pub network: Network,
    pub provenance: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDocument {
    pub scenarios: ScenarioSet,
    pub provenance: Option<Value>,
}

/// Parses a network file; `path` only labels diagnostics.
pub fn parse_network(text: &str, path: &str) -> Result<NetworkDocument, IoError> {
    let file: NetworkFile = parse_json(text, path)?;
    check_version(file.format_version, path)?;
    let nn = file.nodes.count;
    let nl = file.links.len();
    let nc = file.communities;
    let mut links = Vec::with_capacity(nl);
    for (i, [t, h]) in file.links.iter().copied().enumerate() {
        let t = to_zero_based(t, nn, "node", format!("links[{i}][0]"), path)?;
        let h = to_zero_based(h, nn, "node", format!("links[{i}][1]"), path)?;
        links.push((t, h));
    }
    let mut routes = Vec::with_capacity(file.routes.len());
    for (r, route) in file.routes.iter().enumerate() {
        let ids = route
            .iter()
            .enumerate()
            .map(|(j, &l)| to_zero_based(l, nl, "link", format!("routes[{r}][{j}]"), path))
            .collect::<Result<Vec<_>, _>>()?;
        routes.push(ids);
    }
    let mut served = Vec::with_capacity(file.route_communities.len());
    for (r, list) in file.route_communities.iter().enumerate() {
        let ids = list
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                to_zero_based(c, nc, "community", format!("route_communities[{r}][{j}]"), path)
            })
            .collect::<Result<Vec<_>, _>>()?;
        served.push(ids);
    }
    if let Some(coords) = &file.nodes.coordinates {
        if coords.len() != nn {
            return Err(IoError::Invalid {
                path: path.to_string(),
                field: "nodes.coordinates".into(),
                message: format!("expected {nn} coordinate pairs, got {}", coords.len()),
            });
        }
    }
    let mut network = Network::new(nn, links, routes, nc, served).map_err(|e| {
        let message = match e {
            NetworkError::Invalid(v) => v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "),
            other => other.to_string(),
        };
        IoError::Invalid {
            path: path.to_string(),
            field: "(network)".into(),
            message,
        }
    })?;
    network.coordinates = file.nodes.coordinates;
    Ok(NetworkDocument {
        network,
        provenance: file.provenance,
    })
}

pub fn read_network(path: &Path) -> Result<NetworkDocument, IoError> {
    parse_network(&read_text(path)?, &path.display().to_string())
}

pub fn parse_scenarios(text: &str, path: &str) -> Result<ScenarioDocument, IoError> {
    let file: ScenarioFile = parse_json(text, path)?;
    check_version(file.format_version, path)?;
    let mut nodes = Vec::new();
    let mut links = Vec::new();
    let mut probs = Vec::new();
    for entry in file.scenarios {
        nodes.push(entry.node_caps);
        links.push(entry.link_caps);
        probs.push(entry.prob);
    }
    let scenarios = ScenarioSet::new(nodes, links, probs).map_err(|e| IoError::Invalid {
        path: path.to_string(),
        field: "scenarios".into(),
        message: e.to_string(),
    })?;
    Ok(ScenarioDocument {
        scenarios,
        provenance: file.provenance,
    })
}

pub fn read_scenarios(path: &Path) -> Result<ScenarioDocument, IoError> {
    parse_scenarios(&read_text(path)?, &path.display().to_string())
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory JSON serialization");
    s.push('\n');
    s
}

pub fn network_to_json(network: &Network, provenance: Option<Value>) -> String {
    let file = NetworkFile {
        format_version: FORMAT_VERSION,
        nodes: NodesSection {
            count: network.node_count,
            coordinates: network.coordinates.clone(),
        },
        links: network.links.iter().map(|&(t, h)| [t + 1, h + 1]).collect(),
        routes: network
            .routes
            .iter()
            .map(|r| r.iter().map(|l| l + 1).collect())
            .collect(),
        communities: network.community_count,
        route_communities: network
            .route_communities
            .iter()
            .map(|r| r.iter().map(|c| c + 1).collect())
            .collect(),
        provenance,
    };
    pretty(&file)
}

pub fn scenarios_to_json(scenarios: &ScenarioSet, provenance: Option<Value>) -> String {
    let file = ScenarioFile {
        format_version: FORMAT_VERSION,
        scenarios: (0..scenarios.len())
            .map(|i| ScenarioEntry {
                node_caps: scenarios.node_caps[i].clone(),
                link_caps: scenarios.link_caps[i].clone(),
                prob: scenarios.probs[i],
            })
            .collect(),
        provenance,
    };
    pretty(&file)
}

/// Network and scenario documents of a generated case, both stamped with
/// its provenance.
pub fn case_to_json(case: &crate::casegen::GeneratedCase) -> (String, String) {
    let prov = serde_json::to_value(&case.provenance).expect("provenance serializes");
    (
        network_to_json(&case.network, Some(prov.clone())),
        scenarios_to_json(&case.scenarios, Some(prov)),
    )
}

/// Solution document. Vectors are index-aligned with 1-based ids
/// (`x[0]` is community 1, `y[0]` link 1, `z[0]` route 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub format_version: u32,
    /// `alpha-fair` or `max-sum`.
    pub objective: String,
    pub alpha: Option<f64>,
    pub risk: RiskSpec,
    pub objective_value: f64,
    #[serde(flatten)]
    pub solution: FlowSolution,
}

pub fn solution_to_json(file: &SolutionFile) -> String {
    pretty(file)
}

pub fn parse_solution(text: &str, path: &str) -> Result<SolutionFile, IoError> {
    let file: SolutionFile = parse_json(text, path)?;
    check_version(file.format_version, path)?;
    Ok(file)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportFile<'a> {
    pub format_version: u32,
    pub command: &'a str,
    #[serde(flatten)]
    pub report: &'a SolveReport,
}

pub fn report_to_json(command: &str, report: &SolveReport) -> String {
    pretty(&ReportFile {
        format_version: FORMAT_VERSION,
        command,
        report,
    })
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let err = |source| IoError::Write {
        path: path.display().to_string(),
        source,
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(err)?;
    fs::rename(&tmp, path).map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"{
  "format_version": 1,
  "nodes": { "count": 2 },
  "links": [[1, 2], [2, 1]],
  "routes": [[1]],
  "communities": 1,
  "route_communities": [[1]]
}"#;

    #[test]
    fn tiny_network_round_trip() {
        let doc = parse_network(TINY, "tiny.json").unwrap();
        assert_eq!(doc.network.links, vec![(0, 1), (1, 0)]);
        assert_eq!(doc.network.routes, vec![vec![0]]);
        let again = parse_network(&network_to_json(&doc.network, None), "again.json").unwrap();
        assert_eq!(again.network, doc.network);
    }

    #[test]
    fn missing_field_is_named() {
        let text = TINY.replace("\"communities\": 1,", "");
        let err = parse_network(&text, "bad.json").unwrap_err().to_string();
        assert!(err.contains("communities"), "{err}");
    }

    #[test]
    fn wrong_type_names_nested_field() {
        let text = TINY.replace("[[1]],\n  \"communities\"", "[[\"a\"]],\n  \"communities\"");
        match parse_network(&text, "bad.json").unwrap_err() {
            IoError::Parse { field, line, .. } => {
                assert_eq!(field, "routes[0][0]");
                assert_eq!(line, 5);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn truncated_file_reports_location() {
        let cut = &TINY[..40];
        match parse_network(cut, "cut.json").unwrap_err() {
            IoError::Parse { line, column, .. } => assert!(line >= 3 && column > 0),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn zero_id_rejected() {
        let text = TINY.replace("[[1, 2], [2, 1]]", "[[0, 2], [2, 1]]");
        let err = parse_network(&text, "bad.json").unwrap_err().to_string();
        assert!(err.contains("links[0][0]") && err.contains("outside 1..=2"), "{err}");
    }

    #[test]
    fn version_checked() {
        let text = TINY.replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(matches!(parse_network(&text, "v.json"), Err(IoError::Version { found: 9, .. })));
    }

    #[test]
    fn scenario_probabilities_checked() {
        let ok = r#"{"format_version":1,"scenarios":[{"node_caps":[1],"link_caps":[2],"prob":0.5},{"node_caps":[1],"link_caps":[2],"prob":0.5}]}"#;
        assert_eq!(parse_scenarios(ok, "s.json").unwrap().scenarios.len(), 2);
        let bad = ok.replace("\"prob\":0.5}]", "\"prob\":0.4}]");
        let err = parse_scenarios(&bad, "s.json").unwrap_err().to_string();
        assert!(err.contains("sum"), "{err}");
    }
}
