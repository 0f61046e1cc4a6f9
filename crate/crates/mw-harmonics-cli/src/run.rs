//! Execution of configured tasks.

use mw_harmonics::czo::{
    apply_czo_field, cotlar_fit, cz_decompose, endpoint_fit, grand_maximal, pointwise_fit, sparse_dominate, KernelSpec,
};
use mw_harmonics::grid::{ScalarField, VectorField};
use mw_harmonics::maximal::{
    auxiliary_maximal_with, convex_body_maximal, eta_maximal, maximal_sparse_dominate_with, multilinear_maximal,
    weighted_maximal, Input,
};
use mw_harmonics::muckenhoupt::{
    factorization, fujii_wilson_characteristic, oracle_characteristic, reducing_characteristic_with, recip,
    roudenko_characteristic, tensor_characteristic, Characteristic, OracleOptions,
};
use mw_harmonics::weights::{MatrixWeightField, Reducer, ReducerOptions};
use serde_json::json;

use crate::config::{
    mix, CharacteristicMethod, CubeSpec, CzoAction, ExperimentConfig, KernelChoice, MaximalMethod, SparseOperator, Task,
};
use crate::output::{cube_columns, fmt_list, fmt_num, json_num, Report};
use crate::suite::{run_suite, SuiteOptions};
use crate::CliError;

/// Relative slack allowed when an invariant is compared against its bound.
const TOL: f64 = 1e-9;
/// Sandwich ratios come from a direction net.
const SANDWICH_TOL: f64 = 1e-3;

pub fn run(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let mut report = match &cfg.task {
        Task::Characteristic { method } => characteristic(cfg, *method)?,
        Task::Reduce { p } => reduce(cfg, p.value())?,
        Task::Maximal { method, r, eta } => maximal(cfg, *method, r.as_deref(), *eta)?,
        Task::SparseDominate(SparseOperator::Maximal { directions }) => sparse_maximal(cfg, *directions)?,
        Task::SparseDominate(SparseOperator::Czo { kernel, top, eps }) => {
            let k = kernel_for(cfg, *kernel)?;
            czo_sparse(cfg, &k, top, *eps)?
        }
        Task::Nondegeneracy { m, cube, alpha, factorizations } => nondegeneracy(cfg, *m, cube, *alpha, *factorizations)?,
        Task::Czo { kernel, action } => {
            let k = kernel_for(cfg, *kernel)?;
            czo(cfg, &k, action)?
        }
        Task::Verify { tier } => verify(SuiteOptions { seed: cfg.seed, ..SuiteOptions::new(*tier) }),
    };
    report.set("seed", cfg.seed);
    Ok(report)
}

fn lib(path: &str) -> impl Fn(mw_harmonics::Error) -> CliError + '_ {
    move |e| match e {
        mw_harmonics::Error::Budget(_) => CliError::Invariant(format!("{path}: {e}")),
        other => CliError::Input(format!("{path}: {other}")),
    }
}

fn weights(cfg: &ExperimentConfig) -> Result<Vec<MatrixWeightField>, CliError> {
    let ws = cfg.weight_fields()?;
    if ws.is_empty() {
        return Err(CliError::Input("weights: at least one weight is required".into()));
    }
    Ok(ws)
}

fn inputs(cfg: &ExperimentConfig) -> Result<Vec<VectorField>, CliError> {
    let fs = cfg.input_fields()?;
    if fs.is_empty() {
        return Err(CliError::Input("inputs: at least one input is required".into()));
    }
    Ok(fs)
}

fn scalar_inputs(cfg: &ExperimentConfig) -> Result<Vec<ScalarField>, CliError> {
    inputs(cfg)?
        .iter()
        .enumerate()
        .map(|(j, f)| {
            if f.dim != 1 {
                return Err(CliError::Input(format!("inputs[{j}]: scalar input required, got dimension {}", f.dim)));
            }
            Ok(f.component(&[1.0]))
        })
        .collect()
}

fn kernel_for(cfg: &ExperimentConfig, kernel: KernelChoice) -> Result<KernelSpec, CliError> {
    let m = cfg.inputs.len();
    if m == 0 {
        return Err(CliError::Input("inputs: at least one input is required".into()));
    }
    kernel.build(m, cfg.grid.d).map_err(lib("task.kernel"))
}

fn characteristic_rows(report: &mut Report, c: &Characteristic) {
    for v in &c.per_cube {
        let [corner, side] = cube_columns(&v.cube);
        let (lo, hi) = v.slack.unwrap_or((f64::NAN, f64::NAN));
        report.row(vec![corner, side, fmt_num(v.value), fmt_num(lo), fmt_num(hi)]);
    }
    report.set("value", json_num(c.value));
    report.set("argmax", cube_columns(&c.argmax));
}

fn characteristic(cfg: &ExperimentConfig, method: CharacteristicMethod) -> Result<Report, CliError> {
    let ws = weights(cfg)?;
    let refs: Vec<&MatrixWeightField> = ws.iter().collect();
    let cubes = cfg.cubes()?;
    let header = ["corner", "side", "value", "slack_lo", "slack_hi"];
    let mut report = Report::new("characteristic", &header);
    report.set("method", method);
    match method {
        CharacteristicMethod::Roudenko => {
            let ec = cfg.exponent_config()?;
            characteristic_rows(&mut report, &roudenko_characteristic(&refs, &ec, &cubes).map_err(lib("task"))?);
        }
        CharacteristicMethod::Tensor => {
            let ec = cfg.exponent_config()?;
            characteristic_rows(&mut report, &tensor_characteristic(&refs, &ec, &cubes).map_err(lib("task"))?);
        }
        CharacteristicMethod::Reducing => {
            let ec = cfg.exponent_config()?;
            let reducer = Reducer::new(ReducerOptions { seed: mix(cfg.seed, 7), ..ReducerOptions::default() });
            let c = reducing_characteristic_with(&refs, &ec, &cubes, &reducer).map_err(lib("task"))?;
            if let Some((lo, hi)) = c.slack_range() {
                report.set("slack_range", [json_num(lo), json_num(hi)]);
            }
            characteristic_rows(&mut report, &c);
        }
        CharacteristicMethod::Oracle => {
            let ec = cfg.exponent_config()?;
            if !ec.is_classical() {
                return Err(CliError::Input("exponents: the oracle needs r_j = 1 and s = inf".into()));
            }
            let p: Vec<f64> = ec.p_inv.iter().map(|&x| recip(x)).collect();
            let opts = OracleOptions { seed: mix(cfg.seed, 11), ..OracleOptions::default() };
            characteristic_rows(&mut report, &oracle_characteristic(&refs, &p, &cubes, &opts).map_err(lib("task"))?);
        }
        CharacteristicMethod::FujiiWilson => {
            if refs.len() != 1 || refs[0].n() != 1 {
                return Err(CliError::Input("weights: Fujii-Wilson needs exactly one scalar weight".into()));
            }
            let w = refs[0];
            let grid = *w.grid();
            let values = (0..grid.n_cells()).map(|c| w.at(c)[(0, 0)]).collect();
            let scalar = ScalarField::new(grid, values).map_err(lib("weights[0]"))?;
            characteristic_rows(&mut report, &fujii_wilson_characteristic(&scalar, &cubes).map_err(lib("task"))?);
        }
        CharacteristicMethod::Factorization => {
            let ec = cfg.exponent_config()?;
            let f = factorization(&refs, &ec, &cubes).map_err(lib("task"))?;
            report = Report::new("characteristic", &["corner", "side", "multilinear", "tensor_inverse", "factors", "ratio"]);
            report.set("method", method);
            let ratios = f.per_cube_ratios();
            for (i, v) in f.multilinear.per_cube.iter().enumerate() {
                let [corner, side] = cube_columns(&v.cube);
                let factors: Vec<f64> = f.factors.iter().map(|c| c.per_cube[i].value).collect();
                report.row(vec![
                    corner,
                    side,
                    fmt_num(v.value),
                    fmt_num(f.tensor_inverse.per_cube[i].value),
                    fmt_list(&factors),
                    fmt_num(ratios[i]),
                ]);
                if ratios[i] > 1.0 + 1e-6 {
                    report.violate(format!("factorization ratio {} > 1 on cube {}", ratios[i], i));
                }
            }
            report.set("multilinear", json_num(f.multilinear.value));
            report.set("product", json_num(f.product()));
        }
    }
    Ok(report)
}

fn reduce(cfg: &ExperimentConfig, p: f64) -> Result<Report, CliError> {
    let ws = weights(cfg)?;
    let cubes = cfg.cubes()?;
    let reducer = Reducer::new(ReducerOptions { seed: mix(cfg.seed, 7), ..ReducerOptions::default() });
    let header =
        ["weight", "corner", "side", "p", "lower_ratio", "upper_ratio", "lower_bound", "upper_bound", "matrix"];
    let mut report = Report::new("reduce", &header);
    for (j, w) in ws.iter().enumerate() {
        for q in &cubes {
            let r = reducer.reduce(w, q, p).map_err(lib("task"))?;
            let [corner, side] = cube_columns(q);
            report.row(vec![
                j.to_string(),
                corner,
                side,
                fmt_num(p),
                fmt_num(r.lower_ratio),
                fmt_num(r.upper_ratio),
                fmt_num(r.lower_bound),
                fmt_num(r.upper_bound),
                fmt_list(r.a.transpose().as_slice()),
            ]);
            if r.upper_ratio > r.upper_bound * (1.0 + SANDWICH_TOL) || r.lower_ratio < r.lower_bound * (1.0 - SANDWICH_TOL) {
                report.violate(format!("weight {j}: ratios [{}, {}] outside [{}, {}]", r.lower_ratio, r.upper_ratio, r.lower_bound, r.upper_bound));
            }
        }
    }
    Ok(report)
}

fn field_rows(report: &mut Report, f: &ScalarField) {
    for c in 0..f.grid.n_cells() {
        report.row(vec![c.to_string(), fmt_list(&f.grid.center(c)), fmt_num(f.values[c])]);
    }
}

fn maximal(cfg: &ExperimentConfig, method: MaximalMethod, r: Option<&[f64]>, eta: Option<f64>) -> Result<Report, CliError> {
    let cubes = cfg.cubes()?;
    let mut report = Report::new("maximal", &["cell", "center", "value"]);
    report.set("method", method);
    let out = match method {
        MaximalMethod::Multilinear => {
            let fs = inputs(cfg)?.iter().map(|f| f.norms()).collect::<Vec<_>>();
            multilinear_maximal(&fs.iter().collect::<Vec<_>>(), &cubes).map_err(lib("task"))?
        }
        MaximalMethod::Eta => {
            let fs = inputs(cfg)?;
            if fs.len() != 1 {
                return Err(CliError::Input("inputs: the eta maximal operator takes one input".into()));
            }
            let eta = eta.ok_or_else(|| CliError::Input("task.eta: missing".into()))?;
            eta_maximal(&fs[0].norms(), eta, &cubes).map_err(lib("task.eta"))?
        }
        MaximalMethod::Convex => {
            let fs = inputs(cfg)?;
            let ins: Vec<Input> = fs.iter().map(Input::from).collect();
            convex_body_maximal(&ins, &cubes).map_err(lib("task"))?.norms()
        }
        MaximalMethod::Weighted | MaximalMethod::Auxiliary => {
            let fs = inputs(cfg)?;
            let ws = weights(cfg)?;
            let ins: Vec<Input> = fs.iter().map(Input::from).collect();
            let refs: Vec<&MatrixWeightField> = ws.iter().collect();
            if method == MaximalMethod::Weighted {
                let ones = vec![1.0; fs.len()];
                weighted_maximal(&ins, &refs, r.unwrap_or(&ones), &cubes).map_err(lib("task.r"))?
            } else {
                let ec = cfg.exponent_config()?;
                let r: Vec<f64> = ec.r_inv.iter().map(|&x| recip(x)).collect();
                let t: Vec<f64> = ec.t_inv.iter().map(|&x| recip(x)).collect();
                let reducer = Reducer::new(ReducerOptions { seed: mix(cfg.seed, 7), ..ReducerOptions::default() });
                auxiliary_maximal_with(&ins, &refs, &r, &t, &cubes, &reducer).map_err(lib("task"))?
            }
        }
    };
    field_rows(&mut report, &out);
    report.set("max", json_num(out.values.iter().fold(0.0f64, |a, &b| a.max(b))));
    Ok(report)
}

fn sparse_maximal(cfg: &ExperimentConfig, directions: usize) -> Result<Report, CliError> {
    let fs = inputs(cfg)?;
    let cubes = cfg.cubes()?;
    let ins: Vec<Input> = fs.iter().map(Input::from).collect();
    let s = maximal_sparse_dominate_with(&ins, &cubes, directions).map_err(lib("task"))?;
    let mut report = Report::new("sparse-dominate", &["corner", "side"]);
    for q in &s.sparse {
        report.row(cube_columns(q).to_vec());
    }
    report.set("operator", "maximal");
    report.set("bound", json_num(s.bound));
    report.set("measured", json_num(s.measured));
    report.set("martingale_sparse", s.martingale_sparse);
    report.set("exact_support", s.exact_support);
    report.set("certified", s.certified());
    if !s.certified() {
        report.violate(format!("containment ratio {} against bound {}", s.measured, s.bound));
    }
    Ok(report)
}

fn czo_sparse(cfg: &ExperimentConfig, k: &KernelSpec, top: &CubeSpec, eps: f64) -> Result<Report, CliError> {
    let fs = inputs(cfg)?;
    let q0 = top.cube().map_err(lib("task.top"))?;
    let refs: Vec<&VectorField> = fs.iter().collect();
    let s = sparse_dominate(k, &refs, &q0, eps).map_err(lib("task"))?;
    let mut report = Report::new("sparse-dominate", &["corner", "side", "threshold", "exceptional_fraction", "children"]);
    for n in &s.nodes {
        let [corner, side] = cube_columns(&n.cube);
        report.row(vec![corner, side, fmt_num(n.threshold), fmt_num(n.exceptional_fraction), n.children.len().to_string()]);
    }
    report.set("operator", "czo");
    report.set("kernel", k.kind);
    report.set("constant", json_num(s.constant));
    report.set("martingale", s.martingale);
    report.set("dilated_sparse", s.dilated_sparse);
    report.set("dominated", s.dominated);
    report.set("certified", s.certified());
    if !s.certified() {
        report.violate("sparse domination not certified");
    }
    Ok(report)
}

fn nondegeneracy(cfg: &ExperimentConfig, m: usize, cube: &CubeSpec, alpha: f64, factorizations: usize) -> Result<Report, CliError> {
    let grid = cfg.cell_grid()?;
    let q = cube.cube().map_err(lib("task.cube"))?;
    let r = mw_harmonics::czo::nondegeneracy_check(m, &grid, &q, alpha, factorizations, mix(cfg.seed, 13))
        .map_err(lib("task"))?;
    let header = ["m", "d", "cells_per_side", "constant", "a_min", "required_constant", "alpha", "b_max", "b_holds"];
    let mut report = Report::new("nondegeneracy", &header);
    report.row(vec![
        r.m.to_string(),
        r.d.to_string(),
        r.cells_per_side.to_string(),
        fmt_num(r.constant),
        fmt_num(r.a_min),
        fmt_num(r.required_constant),
        fmt_num(r.alpha),
        fmt_num(r.b_max),
        r.b_holds.to_string(),
    ]);
    // Midpoint evaluation loses up to a few cells' width of the lower bound.
    let floor = 1.0 - 5.0 / r.cells_per_side as f64;
    if r.a_min < floor {
        report.violate(format!("a_min {} below {}", r.a_min, floor));
    }
    if !r.b_holds {
        report.violate(format!("b_max {} above 1", r.b_max));
    }
    Ok(report)
}

fn czo(cfg: &ExperimentConfig, k: &KernelSpec, action: &CzoAction) -> Result<Report, CliError> {
    match action {
        CzoAction::Apply => {
            let fs = inputs(cfg)?;
            let refs: Vec<&VectorField> = fs.iter().collect();
            let out = apply_czo_field(k, &refs).map_err(lib("inputs"))?;
            let mut report = Report::new("czo", &["cell", "center", "value"]);
            for c in 0..out.grid.n_cells() {
                report.row(vec![c.to_string(), fmt_list(&out.grid.center(c)), fmt_list(out.get(c))]);
            }
            report.set("action", "apply");
            Ok(report)
        }
        CzoAction::GrandMaximal => {
            let fs = scalar_inputs(cfg)?;
            let cubes = cfg.cubes()?;
            let g = grand_maximal(k, &fs.iter().collect::<Vec<_>>(), &cubes, None).map_err(lib("task"))?;
            let mut report = Report::new("czo", &["cell", "center", "value"]);
            field_rows(&mut report, &g.values);
            report.set("action", "grand_maximal");
            report.set("skipped_cubes", g.skipped.len());
            Ok(report)
        }
        CzoAction::CzDecompose { lambda } => {
            let fs = scalar_inputs(cfg)?;
            if fs.len() != 1 {
                return Err(CliError::Input("inputs: the decomposition takes one input".into()));
            }
            let dec = cz_decompose(&fs[0], *lambda).map_err(lib("task.lambda"))?;
            let mut report = Report::new("czo", &["corner", "side", "mean_abs"]);
            for b in &dec.bad {
                let [corner, side] = cube_columns(&b.cube);
                report.row(vec![corner, side, fmt_num(fs[0].abs_average(&b.cells))]);
            }
            let check = dec.check(&fs[0]);
            report.set("action", "cz_decompose");
            report.set("lambda", json_num(*lambda));
            report.set(
                "check",
                json!({
                    "reconstruction": json_num(check.reconstruction),
                    "good_sup": json_num(check.good_sup),
                    "good_bound": json_num(check.good_bound),
                    "max_mean": json_num(check.max_mean),
                    "measure": json_num(check.measure),
                    "measure_bound": json_num(check.measure_bound),
                }),
            );
            if !check.holds(TOL) {
                report.violate("decomposition properties fail");
            }
            Ok(report)
        }
        CzoAction::Diagnostics { top } => {
            let fs = scalar_inputs(cfg)?;
            let refs: Vec<&ScalarField> = fs.iter().collect();
            let cubes = cfg.cubes()?;
            let q0 = top.cube().map_err(lib("task.top"))?;
            let cotlar = cotlar_fit(k, &refs, &cubes).map_err(lib("task"))?;
            let endpoint = endpoint_fit(k, &refs).map_err(lib("task"))?;
            let pw = pointwise_fit(k, &refs, &q0).map_err(lib("task.top"))?;
            let mut report = Report::new("czo", &["cotlar", "endpoint", "pointwise", "uncovered"]);
            report.row(vec![fmt_num(cotlar), fmt_num(endpoint), fmt_num(pw.c), pw.uncovered.to_string()]);
            report.set("action", "diagnostics");
            Ok(report)
        }
        CzoAction::SparseDominate { top, eps } => czo_sparse(cfg, k, top, *eps),
    }
}

fn verify(opts: SuiteOptions) -> Report {
    let mut report = Report::new("verify", &["criterion", "name", "passed", "measured", "threshold", "detail"]);
    for r in run_suite(&opts) {
        report.row(vec![
            r.id.to_string(),
            r.name.clone(),
            r.passed.to_string(),
            fmt_num(r.measured),
            fmt_num(r.threshold),
            r.detail.clone(),
        ]);
        if !r.passed {
            report.violate(format!("criterion {} {}", r.id, r.name));
        }
        eprintln!("{}", r.line());
    }
    report.set("tier", opts.tier);
    report
}
