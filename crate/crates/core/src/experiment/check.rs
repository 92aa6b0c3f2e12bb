//! Self-check suite behind the `check` verb: finite-difference verification
//! of both training losses on a small fixed graph, and closed-form values of
//! the scalar functions and reductions.

use std::time::Instant;

use crate::activeloop::quantile;
use crate::error::Result;
use crate::hetgraph::{sample_negative_edges, HetGraph, NodeLabel};
use crate::model::{ModelParams, ParamGroup};
use crate::numerics::gradcheck::{DEFAULT_STEP, DEFAULT_TOL};
use crate::numerics::{check_gradients, huber, sigmoid, softplus, GradCheckReport, GradTape, ParamMap, Var};
use crate::rgcn::{Propagation, RgcnConfig};
use crate::seed;
use crate::training::{finetune_loss_for_check, pretrain_loss_on_tape, Observation};

#[derive(Clone, Debug)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub lines: Vec<CheckLine>,
    pub elapsed_s: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }
}

/// Ten nodes (four genes, three proteins, three processes), two relations.
pub fn check_graph() -> HetGraph {
    let mut nodes = Vec::new();
    for i in 0..4 {
        nodes.push((format!("G{i}"), NodeLabel::Gene));
    }
    for i in 0..3 {
        nodes.push((format!("P{i}"), NodeLabel::Protein));
    }
    for i in 0..3 {
        nodes.push((format!("BP{i}"), NodeLabel::BiologicalProcess));
    }
    let edges = [
        (0, 0, 4),
        (1, 0, 5),
        (2, 0, 6),
        (3, 0, 4),
        (4, 0, 5),
        (0, 1, 7),
        (1, 1, 7),
        (2, 1, 8),
        (5, 1, 9),
        (3, 1, 9),
        (6, 1, 8),
    ];
    HetGraph::from_parts(nodes, vec!["ENCODES".into(), "PARTICIPATES_IN".into()], edges).expect("fixed graph is valid")
}

fn param_map(member: &ModelParams) -> ParamMap {
    member
        .named_params()
        .into_iter()
        .map(|(name, t)| (name, t.clone()))
        .collect()
}

fn with_params(template: &ModelParams, params: &ParamMap) -> ModelParams {
    let mut m = template.clone();
    for (name, t) in m.named_params_mut() {
        *t = params[&name].clone();
    }
    m
}

fn gradcheck_line(name: &str, report: &GradCheckReport) -> CheckLine {
    let worst = report
        .blocks
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .map(|b| format!("worst block {} ({:.2e})", b.name, b.max_rel_err))
        .unwrap_or_default();
    let coords: usize = report.blocks.iter().map(|b| b.coords).sum();
    CheckLine {
        name: name.to_string(),
        passed: report.passed(),
        detail: format!(
            "{} blocks, {coords} coordinates, max relative error {:.2e}; {worst}",
            report.blocks.len(),
            report.max_rel_err()
        ),
    }
}

/// Gradient checks of the pretraining and fine-tuning losses, every block.
pub fn gradient_checks(step: f64, tol: f64) -> Result<Vec<(String, GradCheckReport)>> {
    let g = check_graph();
    let prop = Propagation::new(&g);
    let cfg = RgcnConfig::default();
    let mut rng = seed::stream(0, &["check", "init"]);
    let mut member = ModelParams::init_rgcn(g.num_nodes(), g.num_relations(), &cfg, 0.0, &mut rng)?;
    // a nonzero head, so the fine-tuning loss reaches every block
    for (k, x) in member.bilinear.upper.data_mut().iter_mut().enumerate() {
        *x = 0.002 * ((k % 7) as f64 - 3.0);
    }
    member.bilinear.bias = crate::numerics::Tensor::scalar(0.3);

    let positives = g.edges().to_vec();
    let negatives = sample_negative_edges(&g, &positives, seed::derive_seed(0, &["check", "negatives"]))?;
    let params = param_map(&member);
    let blocks_of = |keep: &dyn Fn(ParamGroup) -> bool| -> ParamMap {
        params
            .iter()
            .filter(|(name, _)| keep(ParamGroup::of(name)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    };
    // each loss is checked against exactly the blocks it depends on
    let with = |p: &ParamMap| {
        let mut full = params.clone();
        full.extend(p.iter().map(|(k, v)| (k.clone(), v.clone())));
        with_params(&member, &full)
    };
    let pre = check_gradients(
        |tape: &mut GradTape, p: &ParamMap| -> Result<Var> {
            pretrain_loss_on_tape(tape, &with(p), &prop, &positives, &negatives)
        },
        &blocks_of(&|g| g != ParamGroup::Bilinear),
        step,
        tol,
    )?;

    let observed = [
        Observation { i: 0, j: 1, value: 0.4 },
        Observation { i: 0, j: 2, value: 1.9 },
        Observation { i: 1, j: 3, value: 0.8 },
        Observation { i: 2, j: 3, value: 2.6 },
    ];
    let fine = check_gradients(
        |tape: &mut GradTape, p: &ParamMap| -> Result<Var> {
            finetune_loss_for_check(tape, &with(p), &prop, &observed)
        },
        &blocks_of(&|g| g != ParamGroup::DistMult),
        step,
        tol,
    )?;
    Ok(vec![
        ("gradient: pretraining loss".to_string(), pre),
        ("gradient: fine-tuning loss".to_string(), fine),
    ])
}

fn exact(name: &str, got: f64, want: f64, tol: f64) -> CheckLine {
    CheckLine {
        name: name.to_string(),
        passed: (got - want).abs() <= tol,
        detail: format!("got {got}, expected {want} (tolerance {tol:e})"),
    }
}

/// Closed-form values of the scalar functions and the quantile rule.
pub fn closed_form_checks() -> Vec<CheckLine> {
    let seq: Vec<f64> = (1..=20).map(f64::from).collect();
    vec![
        exact("huber(0.5)", huber(0.5), 0.125, 0.0),
        exact("huber(1)", huber(1.0), 0.5, 0.0),
        exact("huber(-1)", huber(-1.0), 0.5, 0.0),
        exact("huber(2)", huber(2.0), 1.5, 0.0),
        exact("softplus(0)", softplus(0.0), std::f64::consts::LN_2, 1e-12),
        exact("sigmoid(1)", sigmoid(1.0), 0.731_059, 1e-6),
        exact("quantile(1..20, 0.1)", quantile(&seq, 0.1), 2.9, 0.0),
    ]
}

/// Full suite at the default step and tolerance.
pub fn run_checks() -> Result<CheckReport> {
    let start = Instant::now();
    let mut lines: Vec<CheckLine> = gradient_checks(DEFAULT_STEP, DEFAULT_TOL)?
        .iter()
        .map(|(name, r)| gradcheck_line(name, r))
        .collect();
    lines.extend(closed_form_checks());
    Ok(CheckReport {
        lines,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}
