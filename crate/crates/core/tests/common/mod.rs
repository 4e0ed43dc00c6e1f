#![allow(dead_code)]

use channel_homotopy::homotopy::{homotopy_solve, HomotopyOptions, PathEntry, PathRecord};
use channel_homotopy::hydraulics::{forward_simulate, ChannelInputs, StateTrajectory};
use channel_homotopy::ipm::SolverOptions;
use channel_homotopy::nlp::{ChannelProblem, ParametricNlp};
use channel_homotopy::diagnostics::Assumption;
use channel_homotopy::hydraulics::NodeKind;
use channel_homotopy::nlp::Relation;
use channel_homotopy::problem::{example_document, ConstraintDoc, NodeSpec, ProblemDocument, TermDoc};

pub fn example_problem() -> ChannelProblem {
    example_document().to_problem().unwrap()
}

pub fn example_nlp() -> ParametricNlp {
    ParametricNlp::build(&example_problem()).unwrap()
}

pub fn example_path() -> (ParametricNlp, PathRecord) {
    let nlp = example_nlp();
    let path = homotopy_solve(&nlp, &SolverOptions::default(), &HomotopyOptions::default()).unwrap();
    (nlp, path)
}

pub fn node(problem: &ChannelProblem, name: &str) -> usize {
    problem.topology.find(name).unwrap()
}

/// Re-simulates a path frame with the frame's own controlled discharges.
pub fn resimulate(problem: &ChannelProblem, nlp: &ParametricNlp, entry: &PathEntry) -> StateTrajectory {
    let traj = nlp.trajectory(&entry.x);
    let mut inputs: ChannelInputs = problem.inputs.clone();
    let q3 = node(problem, "Q3");
    inputs.series[q3] = Some(traj.values[q3][1..].to_vec());
    forward_simulate(&problem.topology, &problem.params, &inputs, entry.theta).unwrap()
}

/// Largest difference between two trajectories over time indices `1..=T`.
pub fn max_difference(a: &StateTrajectory, b: &StateTrajectory) -> f64 {
    let mut worst: f64 = 0.0;
    for (ra, rb) in a.values.iter().zip(&b.values) {
        for j in 1..ra.len() {
            worst = worst.max((ra[j] - rb[j]).abs());
        }
    }
    worst
}

pub fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()))
}

pub fn build(doc: &ProblemDocument) -> ParametricNlp {
    ParametricNlp::build(&doc.to_problem().unwrap()).unwrap()
}

fn term(variable: &str, time: usize, coefficient: f64) -> TermDoc {
    TermDoc {
        variable: variable.into(),
        time: Some(time),
        coefficient,
    }
}

fn coupling_row(relation: Relation) -> ConstraintDoc {
    ConstraintDoc {
        terms: vec![term("Q3", 1, 1.0), term("Q3", 2, -1.0)],
        relation,
        rhs: 0.0,
        times: None,
    }
}

/// The example with exactly one assumption violated, for each assumption.
pub fn mutants() -> Vec<(Assumption, ParametricNlp)> {
    let mut out = Vec::new();

    let mut doc = example_document();
    doc.extra_constraints.clear();
    out.push((Assumption::Bnd, build(&doc)));

    let mut doc = example_document();
    doc.initial_conditions.insert("H2".into(), doc.parameters.bottom_level);
    out.push((Assumption::Ico, build(&doc)));

    let mut doc = example_document();
    doc.grid[4].boundary = None;
    doc.grid.push(NodeSpec {
        name: "H3".into(),
        kind: NodeKind::Level,
        boundary: None,
    });
    doc.initial_conditions.insert("H3".into(), 0.0);
    let mut bound = doc.bounds[0].clone();
    bound.variable = "H3".into();
    doc.bounds.push(bound);
    out.push((Assumption::Hbc, build(&doc)));

    let mut doc = example_document();
    doc.objective.quadratic[0].weight = 0.0;
    out.push((Assumption::Obj, build(&doc)));

    let mut doc = example_document();
    doc.extra_constraints.push(coupling_row(Relation::LessEqual));
    let mut nlp = build(&doc);
    let (a, b) = (nlp.num_hydraulic(), nlp.num_hydraulic() + 1);
    nlp.add_product_term(0, a, b, 0.5);
    out.push((Assumption::Lin, nlp));

    let mut doc = example_document();
    doc.extra_constraints.push(coupling_row(Relation::Equal));
    doc.extra_constraints.push(coupling_row(Relation::Equal));
    out.push((Assumption::Ind, build(&doc)));

    out
}
