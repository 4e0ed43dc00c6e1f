//! JSON problem documents.
//!
//! A document names its nodes; every other section refers to nodes by name.
//! Terms without an explicit time apply to every time index of their time
//! range, which defaults to `1..=T`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydraulics::{BoundaryKind, ChannelInputs, GridTopology, HydraulicParameters, Node, NodeKind};
use crate::nlp::{
    AffineConstraint, BoundSpec, ChannelProblem, LinearTerm, ObjectiveSpec, QuadraticTerm, Relation,
    StateRef,
};

pub const SCHEMA_VERSION: u32 = 1;

const EXAMPLE: &str = include_str!("../data/example.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryKind>,
}

/// Inclusive range of time indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeRange {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticDoc {
    pub variable: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<TimeRange>,
    pub weight: f64,
    #[serde(default)]
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearDoc {
    pub variable: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<TimeRange>,
    pub coefficient: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveDoc {
    #[serde(default)]
    pub quadratic: Vec<QuadraticDoc>,
    #[serde(default)]
    pub linear: Vec<LinearDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermDoc {
    pub variable: String,
    /// Fixed time index. Without it the term follows the row's time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<usize>,
    pub coefficient: f64,
}

/// Affine row `Σ a_i x_i (<= | = | >=) rhs`. Unless every term has a fixed
/// time, the row is replicated once per index of `times`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintDoc {
    pub terms: Vec<TermDoc>,
    pub relation: Relation,
    pub rhs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<TimeRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundDoc {
    pub variable: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<TimeRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    pub schema_version: u32,
    pub grid: Vec<NodeSpec>,
    pub parameters: HydraulicParameters,
    #[serde(default)]
    pub initial_conditions: BTreeMap<String, f64>,
    #[serde(default)]
    pub boundary_series: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub objective: ObjectiveDoc,
    #[serde(default)]
    pub extra_constraints: Vec<ConstraintDoc>,
    #[serde(default)]
    pub bounds: Vec<BoundDoc>,
}

/// Parses and validates a document.
pub fn parse_problem(text: &str) -> Result<ProblemDocument> {
    let doc: ProblemDocument = serde_json::from_str(text).map_err(|e| {
        Error::Document(format!("line {}, column {}: {e}", e.line(), e.column()))
    })?;
    doc.validate()?;
    Ok(doc)
}

pub fn load_problem(path: &Path) -> Result<ProblemDocument> {
    parse_problem(&std::fs::read_to_string(path)?)
}

/// The bundled example channel.
pub fn example_document() -> ProblemDocument {
    parse_problem(EXAMPLE).expect("bundled example is valid")
}

pub fn example_text() -> &'static str {
    EXAMPLE
}

impl ProblemDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("documents always serialize")
    }

    fn topology(&self) -> Result<GridTopology> {
        GridTopology::new(
            self.grid
                .iter()
                .map(|n| Node {
                    name: n.name.clone(),
                    kind: n.kind,
                    boundary: n.boundary,
                })
                .collect(),
        )
    }

    /// Collects every schema violation; the error lists all of them.
    pub fn validate(&self) -> Result<()> {
        self.to_problem().map(|_| ())
    }

    /// Resolves names and time ranges into a [`ChannelProblem`].
    pub fn to_problem(&self) -> Result<ChannelProblem> {
        let mut issues = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            issues.push(format!(
                "schema_version: unsupported version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            ));
        }
        let topology = match self.topology() {
            Ok(t) => t,
            Err(Error::Topology(msg)) => {
                issues.push(format!("grid: {msg}"));
                return Err(Error::Document(issues.join("; ")));
            }
            Err(e) => return Err(e),
        };
        if let Err(e) = self.parameters.validate() {
            issues.push(format!("parameters: {e}"));
            return Err(Error::Document(issues.join("; ")));
        }
        let steps = self.parameters.steps;
        let n = topology.len();

        let mut inputs = ChannelInputs {
            initial: vec![None; n],
            series: vec![None; n],
        };
        for (name, &value) in &self.initial_conditions {
            match topology.find(name) {
                Some(node) => inputs.initial[node] = Some(value),
                None => issues.push(format!("initial_conditions.{name}: unknown node")),
            }
        }
        for (name, series) in &self.boundary_series {
            let Some(node) = topology.find(name) else {
                issues.push(format!("boundary_series.{name}: unknown node"));
                continue;
            };
            let boundary = topology.nodes()[node].boundary;
            if !matches!(
                boundary,
                Some(BoundaryKind::LevelBoundary | BoundaryKind::FlowBoundaryFixed)
            ) {
                issues.push(format!("boundary_series.{name}: node has no prescribed boundary"));
            } else if series.len() != steps {
                issues.push(format!(
                    "boundary_series.{name}: expected {steps} values, got {}",
                    series.len()
                ));
            } else if !series.iter().all(|v| v.is_finite()) {
                issues.push(format!("boundary_series.{name}: values must be finite"));
            } else {
                inputs.series[node] = Some(series.clone());
            }
        }
        for spec in topology.nodes() {
            if spec.boundary == Some(BoundaryKind::FlowBoundaryFixed)
                && !self.boundary_series.contains_key(&spec.name)
            {
                issues.push(format!("boundary_series.{}: missing series for fixed flow boundary", spec.name));
            }
        }

        let resolve = |section: &str, name: &str, issues: &mut Vec<String>| -> Option<usize> {
            let found = topology.find(name);
            if found.is_none() {
                issues.push(format!("{section}: unknown node {name}"));
            }
            found
        };
        let range = |section: &str, times: Option<TimeRange>, first: usize, issues: &mut Vec<String>| {
            let r = times.unwrap_or(TimeRange { from: 1, to: steps });
            if r.from < first || r.to > steps || r.from > r.to {
                issues.push(format!(
                    "{section}: time range {}..={} outside {first}..={steps}",
                    r.from, r.to
                ));
                None
            } else {
                Some(r.from..=r.to)
            }
        };

        let mut objective = ObjectiveSpec::default();
        for (i, q) in self.objective.quadratic.iter().enumerate() {
            let section = format!("objective.quadratic[{i}]");
            let node = resolve(&section, &q.variable, &mut issues);
            let times = range(&section, q.times, 0, &mut issues);
            if let (Some(node), Some(times)) = (node, times) {
                for t in times {
                    objective.quadratic.push(QuadraticTerm {
                        var: StateRef::new(node, t),
                        weight: q.weight,
                        target: q.target,
                    });
                }
            }
        }
        for (i, l) in self.objective.linear.iter().enumerate() {
            let section = format!("objective.linear[{i}]");
            let node = resolve(&section, &l.variable, &mut issues);
            let times = range(&section, l.times, 0, &mut issues);
            if let (Some(node), Some(times)) = (node, times) {
                for t in times {
                    objective.linear.push(LinearTerm {
                        var: StateRef::new(node, t),
                        coefficient: l.coefficient,
                    });
                }
            }
        }

        let mut constraints = Vec::new();
        for (i, c) in self.extra_constraints.iter().enumerate() {
            let section = format!("extra_constraints[{i}]");
            if c.terms.is_empty() {
                issues.push(format!("{section}: no terms"));
                continue;
            }
            let nodes: Vec<Option<usize>> = c
                .terms
                .iter()
                .map(|t| resolve(&section, &t.variable, &mut issues))
                .collect();
            for t in &c.terms {
                if t.time.is_some_and(|time| time > steps) {
                    issues.push(format!("{section}: time {} of {} beyond {steps}", t.time.unwrap(), t.variable));
                }
            }
            let fixed_times = c.terms.iter().all(|t| t.time.is_some());
            let rows: Vec<usize> = if fixed_times && c.times.is_none() {
                vec![0]
            } else {
                match range(&section, c.times, 0, &mut issues) {
                    Some(r) => r.collect(),
                    None => continue,
                }
            };
            if nodes.iter().any(Option::is_none) {
                continue;
            }
            for row_time in rows {
                constraints.push(AffineConstraint {
                    terms: c
                        .terms
                        .iter()
                        .zip(&nodes)
                        .map(|(t, node)| {
                            (StateRef::new(node.unwrap(), t.time.unwrap_or(row_time)), t.coefficient)
                        })
                        .collect(),
                    relation: c.relation,
                    rhs: c.rhs,
                });
            }
        }

        let mut bounds = Vec::new();
        for (i, b) in self.bounds.iter().enumerate() {
            let section = format!("bounds[{i}]");
            let node = resolve(&section, &b.variable, &mut issues);
            let times = range(&section, b.times, 1, &mut issues);
            if let (Some(l), Some(u)) = (b.lower, b.upper) {
                if !(l < u) {
                    issues.push(format!("{section}: lower bound {l} not below upper bound {u}"));
                }
            }
            if let (Some(node), Some(times)) = (node, times) {
                for t in times {
                    bounds.push(BoundSpec {
                        var: StateRef::new(node, t),
                        lower: b.lower,
                        upper: b.upper,
                    });
                }
            }
        }

        if !issues.is_empty() {
            return Err(Error::Document(issues.join("; ")));
        }
        Ok(ChannelProblem {
            topology,
            params: self.parameters,
            inputs,
            objective,
            constraints,
            bounds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn example_parameters() {
        let doc = example_document();
        let p = doc.parameters;
        assert_eq!(p.steps, 10);
        assert_eq!(p.dt, 300.0);
        assert_eq!(p.bottom_level, -1.0);
        assert_eq!(p.length, 1000.0);
        assert_eq!(p.width, 5.0);
        assert_eq!(p.chezy, 10.0);
        assert_eq!(p.nominal_level, -0.25);
        assert_eq!(p.nominal_discharge, 0.5);
        assert_eq!(p.dx, 500.0);
        for name in ["H1", "H2", "Q2"] {
            assert_eq!(doc.initial_conditions[name], 0.0);
        }
        let inflow = &doc.boundary_series["Q1"];
        for (j, v) in inflow.iter().enumerate() {
            let expected = (std::f64::consts::PI * (j + 1) as f64 / 10.0).sin();
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn example_round_trips() {
        let doc = example_document();
        assert_eq!(parse_problem(&doc.to_json()).unwrap(), doc);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let mut doc = example_document();
        doc.grid.clear();
        let err = doc.validate().unwrap_err().to_string();
        assert!(err.contains("no nodes"), "{err}");
    }

    #[test]
    fn short_series_names_the_node() {
        let mut doc = example_document();
        doc.boundary_series.get_mut("Q1").unwrap().pop();
        let err = doc.validate().unwrap_err().to_string();
        assert!(err.contains("Q1") && err.contains("expected 10 values, got 9"), "{err}");
    }

    #[test]
    fn dangling_reference() {
        let mut doc = example_document();
        doc.bounds[0].variable = "H9".into();
        let err = doc.validate().unwrap_err().to_string();
        assert!(err.contains("bounds[0]: unknown node H9"), "{err}");
    }

    #[test]
    fn syntax_error_has_location() {
        let err = parse_problem("{\n  \"schema_version\": 1,\n  oops\n}").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn fixed_time_terms_give_one_row() {
        let mut doc = example_document();
        doc.extra_constraints.push(ConstraintDoc {
            terms: vec![
                TermDoc { variable: "Q3".into(), time: Some(1), coefficient: 1.0 },
                TermDoc { variable: "Q3".into(), time: Some(2), coefficient: 1.0 },
            ],
            relation: Relation::LessEqual,
            rhs: 1.0,
            times: None,
        });
        let problem = doc.to_problem().unwrap();
        assert_eq!(problem.constraints.len(), 21);
        assert_eq!(problem.constraints[20].terms.len(), 2);
    }

    fn arb_document() -> impl Strategy<Value = ProblemDocument> {
        (
            1usize..6,
            0.5f64..20.0,
            -3.0f64..0.0,
            proptest::collection::vec(-2.0f64..2.0, 12),
            0.1f64..5.0,
            prop::bool::ANY,
        )
            .prop_map(|(steps, width, bottom, values, weight, extra)| {
                let mut doc = example_document();
                doc.parameters.steps = steps;
                doc.parameters.width = width;
                doc.parameters.bottom_level = bottom;
                doc.parameters.nominal_level = bottom + 0.75;
                doc.boundary_series
                    .insert("Q1".into(), values[..steps].to_vec());
                doc.objective.quadratic[0].weight = weight;
                doc.objective.quadratic[1].times = Some(TimeRange { from: 1, to: steps });
                for b in &mut doc.bounds {
                    if b.variable.starts_with('H') {
                        b.lower = Some(bottom);
                    }
                }
                if extra {
                    doc.objective.linear.push(LinearDoc {
                        variable: "Q3".into(),
                        times: None,
                        coefficient: values[11],
                    });
                }
                doc
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn documents_round_trip(doc in arb_document()) {
            prop_assert!(doc.validate().is_ok());
            prop_assert_eq!(parse_problem(&doc.to_json()).unwrap(), doc);
        }
    }
}
