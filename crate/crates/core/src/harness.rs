//! Error norms, convergence studies and run orchestration.
//!
//! A run discretizes a [`RunCase`](crate::mms::RunCase) on a structured mesh,
//! integrates it, and samples space-time norms of the solution and of the
//! error against either the exact solution or a finer reference run. Studies
//! chain runs over mesh or time-step levels and report convergence orders in
//! the layout of the benchmark tables.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::BasisTables;
use crate::integrator::{IntegratorConfig, IntegratorError, StabilityLog, Stepper};
use crate::mesh::{MeshError, TetMesh};
use crate::mms::{ExactSolution, RunCase};
use crate::spaces::{ElementGeometry, FemField, FemSpace, SpaceError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("convergence order needs positive errors, got {0} and {1}")]
    NonPositiveError(f64, f64),
    #[error("error norms need an exact solution or a reference run")]
    MissingReference,
    #[error("mixed discretization needs p >= 2 (moments must stay continuous)")]
    UnsupportedDegreePair,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// L2 norm of `field - f` over the mesh via tabulated basis sweeps.
pub fn l2_error_vs_fn(
    field: &FemField,
    f: impl Fn([f64; 3]) -> f64 + Sync,
    exactness: usize,
) -> f64 {
    let space = &field.space;
    let tables = BasisTables::volume(space, exactness);
    let nb = tables.nb;
    let total: f64 = (0..space.mesh.num_tets())
        .into_par_iter()
        .map(|t| {
            let geo = ElementGeometry::new(&space.mesh, t);
            let det = geo.det.abs();
            let dofs = space.cell_dofs(t);
            let mut acc = 0.0;
            for (q, &w) in tables.rule.weights.iter().enumerate() {
                let nv = &tables.vals[q * nb..(q + 1) * nb];
                let val: f64 = nv.iter().zip(dofs).map(|(v, &d)| v * field.coeffs[d]).sum();
                let x = geo.to_physical(tables.rule.points[q]);
                let e = val - f(x);
                acc += w * det * e * e;
            }
            acc
        })
        .sum();
    total.max(0.0).sqrt()
}

/// L2 norm of a discrete field.
pub fn l2_norm_field(field: &FemField, exactness: usize) -> f64 {
    l2_error_vs_fn(field, |_| 0.0, exactness)
}

/// L2 norm of a pointwise function over a mesh.
pub fn l2_norm_fn(mesh: &TetMesh, f: impl Fn([f64; 3]) -> f64 + Sync, exactness: usize) -> f64 {
    crate::assembly::integrate_volume(mesh, exactness, |x| {
        let v = f(x);
        v * v
    })
    .max(0.0)
    .sqrt()
}

/// L2 norm of the difference between a field and a reference field living on
/// a (finer) mesh of the same box.
pub fn l2_diff_fields(field: &FemField, reference: &FemField, exactness: usize) -> f64 {
    l2_error_vs_fn(
        field,
        |x| {
            reference
                .evaluate(x)
                .expect("reference field must cover the coarse domain")
        },
        exactness,
    )
}

/// Spatial L2 norms of one sampled state: solution norms, exact norms and
/// errors, accumulated in a single sweep.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleNorms {
    pub t_h: f64,
    pub phi_h: f64,
    pub t_exact: f64,
    pub phi_exact: f64,
    pub err_t: f64,
    pub err_phi: f64,
}

/// Evaluates all sampled norms of a state in one quadrature sweep.
pub fn sample_norms(
    t_field: &FemField,
    phi: &[FemField; 2],
    exact: Option<(&ExactSolution, f64)>,
    exactness: usize,
) -> SampleNorms {
    let t_space = &t_field.space;
    let phi_space = &phi[0].space;
    let t_tables = BasisTables::volume(t_space, exactness);
    let p_tables = BasisTables::volume(phi_space, exactness);
    let (nt, np) = (t_tables.nb, p_tables.nb);
    let sums: [f64; 6] = (0..t_space.mesh.num_tets())
        .into_par_iter()
        .map(|t| {
            let geo = ElementGeometry::new(&t_space.mesh, t);
            let det = geo.det.abs();
            let t_dofs = t_space.cell_dofs(t);
            let p_dofs = phi_space.cell_dofs(t);
            let mut acc = [0.0f64; 6];
            for (q, &w) in t_tables.rule.weights.iter().enumerate() {
                let scale = w * det;
                let tv = &t_tables.vals[q * nt..(q + 1) * nt];
                let th: f64 = tv.iter().zip(t_dofs).map(|(v, &d)| v * t_field.coeffs[d]).sum();
                let pv = &p_tables.vals[q * np..(q + 1) * np];
                let mut ph = [0.0f64; 2];
                for (v, &d) in pv.iter().zip(p_dofs) {
                    ph[0] += v * phi[0].coeffs[d];
                    ph[1] += v * phi[1].coeffs[d];
                }
                acc[0] += scale * th * th;
                acc[1] += scale * (ph[0] * ph[0] + ph[1] * ph[1]);
                if let Some((ex, time)) = exact {
                    let x = geo.to_physical(t_tables.rule.points[q]);
                    let [te, p1, p2] = match &ex.fused_values {
                        Some(f) => f(x, time),
                        None => [
                            (ex.temperature)(x, time),
                            (ex.phi[0])(x, time),
                            (ex.phi[1])(x, time),
                        ],
                    };
                    acc[2] += scale * te * te;
                    acc[3] += scale * (p1 * p1 + p2 * p2);
                    let et = th - te;
                    let (e1, e2) = (ph[0] - p1, ph[1] - p2);
                    acc[4] += scale * et * et;
                    acc[5] += scale * (e1 * e1 + e2 * e2);
                }
            }
            acc
        })
        .reduce(
            || [0.0; 6],
            |mut a, b| {
                for i in 0..6 {
                    a[i] += b[i];
                }
                a
            },
        );
    SampleNorms {
        t_h: sums[0].max(0.0).sqrt(),
        phi_h: sums[1].max(0.0).sqrt(),
        t_exact: sums[2].max(0.0).sqrt(),
        phi_exact: sums[3].max(0.0).sqrt(),
        err_t: sums[4].max(0.0).sqrt(),
        err_phi: sums[5].max(0.0).sqrt(),
    }
}

/// Space-time norms sampled over a run: `max_n` of the spatial L2 norms.
#[derive(Debug, Clone, Default)]
pub struct RunNorms {
    /// `max_n ||T(t_n)||` of the exact solution (when known).
    pub t_exact: f64,
    pub t_h: f64,
    /// `max_n (||phi_1||^2 + ||phi_2||^2)^{1/2}` of the exact moments.
    pub phi_exact: f64,
    pub phi_h: f64,
    pub err_t: Option<f64>,
    pub err_phi: Option<f64>,
}

/// Discretization and sampling controls of one run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub cells: [usize; 3],
    pub degree: usize,
    /// Moments at degree `p` instead of `p - 1`.
    pub unified: bool,
    pub config: IntegratorConfig,
    /// Evaluate norms every k-th step (last step always sampled).
    pub error_stride: usize,
    /// Store fields at these times (matched to the step grid within half a step).
    pub snapshot_times: Vec<f64>,
}

impl RunSpec {
    pub fn new(cells: [usize; 3], degree: usize, config: IntegratorConfig) -> Self {
        Self {
            cells,
            degree,
            unified: false,
            config,
            error_stride: 1,
            snapshot_times: Vec::new(),
        }
    }

    /// Cells per axis for dyadic level `m` (`h` label `2^-m`).
    pub fn level_cells(m: u32) -> [usize; 3] {
        let n = 1usize << m;
        [n, n, n]
    }
}

pub struct Snapshot {
    pub t: f64,
    pub temperature: FemField,
    pub phi: [FemField; 2],
}

pub struct RunOutput {
    pub norms: RunNorms,
    /// Wall-clock seconds of the time loop only.
    pub cpu_seconds: f64,
    pub log: StabilityLog,
    pub final_temperature: FemField,
    pub final_phi: [FemField; 2],
    pub snapshots: Vec<Snapshot>,
    /// Per-sampled-step history `(t, ||e_T||, ||e_phi||)` when errors exist.
    pub error_history: Vec<(f64, f64, f64)>,
}

/// Builds spaces for a case at the given spec.
pub fn build_spaces(
    case: &RunCase,
    spec: &RunSpec,
) -> Result<(Arc<FemSpace>, Arc<FemSpace>), HarnessError> {
    if !spec.unified && spec.degree < 2 {
        return Err(HarnessError::UnsupportedDegreePair);
    }
    let mesh = Arc::new(TetMesh::build_box_mesh(case.domain, spec.cells)?);
    let t_space = FemSpace::new(mesh.clone(), spec.degree)?;
    let phi_degree = if spec.unified {
        spec.degree
    } else {
        spec.degree - 1
    };
    let phi_space = FemSpace::new(mesh, phi_degree)?;
    Ok((t_space, phi_space))
}

/// Runs a case, sampling norms against the exact solution when available.
pub fn run_case(case: &RunCase, spec: &RunSpec) -> Result<RunOutput, HarnessError> {
    run_case_with_reference(case, spec, None)
}

/// Runs a case, measuring errors against a finer reference run's stored
/// snapshots when the case has no exact solution.
pub fn run_case_with_reference(
    case: &RunCase,
    spec: &RunSpec,
    reference: Option<&[Snapshot]>,
) -> Result<RunOutput, HarnessError> {
    let (t_space, phi_space) = build_spaces(case, spec)?;
    let mut stepper = Stepper::new(
        case.problem.clone(),
        t_space.clone(),
        phi_space.clone(),
        spec.config.clone(),
    )?;
    let err_exactness = 2 * spec.degree + 6;
    let n_steps = spec.config.num_steps()?;
    let stride = spec.error_stride.max(1);

    let mut norms = RunNorms::default();
    let mut error_history = Vec::new();
    let mut snapshots = Vec::new();
    let mut have_errors = false;

    let exact = case.exact.clone();
    let sigma = spec.config.sigma;
    let snapshot_steps: Vec<usize> = spec
        .snapshot_times
        .iter()
        .map(|&ts| ((ts / sigma).round() as usize).min(n_steps))
        .collect();

    let start = Instant::now();
    let result = stepper.run(|s| {
        let step = s.state.step;
        let sampled = step % stride == 0 || step == n_steps;
        if sampled {
            let t = s.state.t;
            let sample = sample_norms(
                &s.state.t_n,
                &s.state.phi_n,
                exact.as_ref().map(|ex| (ex, t)),
                err_exactness,
            );
            norms.t_h = norms.t_h.max(sample.t_h);
            norms.phi_h = norms.phi_h.max(sample.phi_h);
            if exact.is_some() {
                norms.t_exact = norms.t_exact.max(sample.t_exact);
                norms.phi_exact = norms.phi_exact.max(sample.phi_exact);
                norms.err_t = Some(norms.err_t.unwrap_or(0.0).max(sample.err_t));
                norms.err_phi = Some(norms.err_phi.unwrap_or(0.0).max(sample.err_phi));
                error_history.push((t, sample.err_t, sample.err_phi));
                have_errors = true;
            } else if let Some(refs) = reference {
                // match the reference snapshot at this time, if present
                if let Some(snap) = refs.iter().find(|r| (r.t - t).abs() <= 0.5 * sigma) {
                    let et = l2_diff_fields(&s.state.t_n, &snap.temperature, err_exactness);
                    let ep = ((0..2)
                        .map(|j| {
                            l2_diff_fields(&s.state.phi_n[j], &snap.phi[j], err_exactness).powi(2)
                        })
                        .sum::<f64>())
                    .sqrt();
                    norms.err_t = Some(norms.err_t.unwrap_or(0.0).max(et));
                    norms.err_phi = Some(norms.err_phi.unwrap_or(0.0).max(ep));
                    error_history.push((t, et, ep));
                    have_errors = true;
                }
            }
        }
        if snapshot_steps.contains(&step) {
            snapshots.push(Snapshot {
                t: s.state.t,
                temperature: s.state.t_n.clone(),
                phi: [s.state.phi_n[0].clone(), s.state.phi_n[1].clone()],
            });
        }
    });
    let cpu_seconds = start.elapsed().as_secs_f64();
    result?;
    let _ = have_errors;

    Ok(RunOutput {
        norms,
        cpu_seconds,
        log: stepper.log,
        final_temperature: stepper.state.t_n.clone(),
        final_phi: [stepper.state.phi_n[0].clone(), stepper.state.phi_n[1].clone()],
        snapshots,
        error_history,
    })
}

/// `log(err_coarse / err_fine) / log(ratio)`.
pub fn convergence_order(
    err_coarse: f64,
    err_fine: f64,
    ratio: f64,
) -> Result<f64, HarnessError> {
    if !(err_coarse > 0.0) || !(err_fine > 0.0) {
        return Err(HarnessError::NonPositiveError(err_coarse, err_fine));
    }
    Ok((err_coarse / err_fine).ln() / ratio.ln())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn lsq_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

/// A row of a convergence report in the benchmark-table layout.
#[derive(Debug, Clone)]
pub struct ReportRow {
    /// `h` label or `sigma` for the row.
    pub parameter: f64,
    pub t_exact: f64,
    pub t_h: f64,
    pub phi_exact: f64,
    pub phi_h: f64,
    pub err_t: f64,
    pub co_t: Option<f64>,
    pub err_phi: f64,
    pub co_phi: Option<f64>,
    pub cpu_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ConvergenceReport {
    /// "h" or "sigma"
    pub parameter_name: String,
    pub rows: Vec<ReportRow>,
}

impl ConvergenceReport {
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(
            w,
            "{},norm_T,norm_T_h,norm_phi,norm_phi_h,err_T,CO_T,err_phi,CO_phi,cpu_s",
            self.parameter_name
        )?;
        for r in &self.rows {
            let co = |c: Option<f64>| c.map_or("....".to_string(), |v| format!("{v:.4}"));
            writeln!(
                w,
                "{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{},{:.6e},{},{:.4}",
                r.parameter,
                r.t_exact,
                r.t_h,
                r.phi_exact,
                r.phi_h,
                r.err_t,
                co(r.co_t),
                r.err_phi,
                co(r.co_phi),
                r.cpu_seconds
            )?;
        }
        Ok(())
    }

    /// Successive convergence orders get attached against `ratio`.
    fn attach_orders(&mut self, ratio: f64) {
        for i in 1..self.rows.len() {
            let (prev_t, prev_p) = (self.rows[i - 1].err_t, self.rows[i - 1].err_phi);
            let (cur_t, cur_p) = (self.rows[i].err_t, self.rows[i].err_phi);
            self.rows[i].co_t = convergence_order(prev_t, cur_t, ratio).ok();
            self.rows[i].co_phi = convergence_order(prev_p, cur_p, ratio).ok();
        }
    }
}

fn norms_to_row(parameter: f64, out: &RunOutput) -> ReportRow {
    ReportRow {
        parameter,
        t_exact: out.norms.t_exact,
        t_h: out.norms.t_h,
        phi_exact: out.norms.phi_exact,
        phi_h: out.norms.phi_h,
        err_t: out.norms.err_t.unwrap_or(f64::NAN),
        co_t: None,
        err_phi: out.norms.err_phi.unwrap_or(f64::NAN),
        co_phi: None,
        cpu_seconds: out.cpu_seconds,
    }
}

/// Spatial convergence study over dyadic levels at fixed `sigma`.
///
/// Cases without an exact solution are measured against a common reference
/// run one level finer in space and ten times finer in time.
pub fn converge_space(
    case: &RunCase,
    degree: usize,
    levels: &[u32],
    config: &IntegratorConfig,
    unified: bool,
    error_stride: usize,
) -> Result<ConvergenceReport, HarnessError> {
    let mut report = ConvergenceReport {
        parameter_name: "h".into(),
        ..Default::default()
    };
    let reference = if case.exact.is_none() {
        Some(self_reference(case, degree, levels.iter().copied().max().unwrap() + 1, config)?)
    } else {
        None
    };
    for &m in levels {
        let mut spec = RunSpec::new(RunSpec::level_cells(m), degree, config.clone());
        spec.unified = unified;
        spec.error_stride = error_stride;
        let out = run_case_with_reference(case, &spec, reference.as_deref())?;
        report.rows.push(norms_to_row(2f64.powi(-(m as i32)), &out));
    }
    report.attach_orders(2.0);
    Ok(report)
}

/// Temporal convergence study over a list of time steps at a fixed level.
pub fn converge_time(
    case: &RunCase,
    degree: usize,
    level: u32,
    sigmas: &[f64],
    config_template: &IntegratorConfig,
    unified: bool,
    error_stride: usize,
) -> Result<ConvergenceReport, HarnessError> {
    let mut report = ConvergenceReport {
        parameter_name: "sigma".into(),
        ..Default::default()
    };
    let reference = if case.exact.is_none() {
        let mut cfg = config_template.clone();
        cfg.sigma = sigmas.iter().copied().fold(f64::INFINITY, f64::min) / 10.0;
        Some(self_reference(case, degree, level + 1, &cfg)?)
    } else {
        None
    };
    for &sigma in sigmas {
        let mut cfg = config_template.clone();
        cfg.sigma = sigma;
        let mut spec = RunSpec::new(RunSpec::level_cells(level), degree, cfg);
        spec.unified = unified;
        spec.error_stride = error_stride;
        let out = run_case_with_reference(case, &spec, reference.as_deref())?;
        report.rows.push(norms_to_row(sigma, &out));
    }
    report.attach_orders(10.0);
    Ok(report)
}

/// Runs the reference for self-convergence studies and stores snapshots on
/// the coarse step grid (every 10th step of the reference).
fn self_reference(
    case: &RunCase,
    degree: usize,
    level: u32,
    config: &IntegratorConfig,
) -> Result<Vec<Snapshot>, HarnessError> {
    let mut cfg = config.clone();
    cfg.sigma = config.sigma / 10.0;
    let mut spec = RunSpec::new(RunSpec::level_cells(level), degree, cfg);
    // store the state at every coarse step time
    let n_coarse = (config.t_final / config.sigma).round() as usize;
    spec.snapshot_times = (0..=n_coarse).map(|k| k as f64 * config.sigma).collect();
    spec.error_stride = usize::MAX;
    let out = run_case(case, &spec)?;
    Ok(out.snapshots)
}

/// Outcome of the unified-vs-mixed comparison.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub scheme: String,
    pub dofs_phi: usize,
    pub err_t: f64,
    pub cpu_seconds: f64,
}

/// Runs the same problem with moments at degree `p` (unified) and `p - 1`
/// (mixed) and reports errors and solve-phase CPU times.
pub fn compare_unified_mixed(
    case: &RunCase,
    degree: usize,
    level: u32,
    config: &IntegratorConfig,
) -> Result<Vec<CompareRow>, HarnessError> {
    if degree < 2 {
        return Err(HarnessError::UnsupportedDegreePair);
    }
    let mut rows = Vec::new();
    for unified in [true, false] {
        let mut spec = RunSpec::new(RunSpec::level_cells(level), degree, config.clone());
        spec.unified = unified;
        let (_, phi_space) = build_spaces(case, &spec)?;
        let dofs_phi = phi_space.num_dofs;
        let out = run_case(case, &spec)?;
        rows.push(CompareRow {
            scheme: if unified {
                format!("P{degree}/P{degree}")
            } else {
                format!("P{degree}/P{}", degree - 1)
            },
            dofs_phi,
            err_t: out.norms.err_t.ok_or(HarnessError::MissingReference)?,
            cpu_seconds: out.cpu_seconds,
        });
    }
    Ok(rows)
}

/// Result of the radiative-equilibrium fixed-point run.
#[derive(Debug, Clone)]
pub struct EquilibriumReport {
    pub max_t_drift_rel: f64,
    pub max_phi_dev_rel: f64,
    pub steps: usize,
}

/// Runs the equilibrium configuration (`T_0 = T_m`, default constants) and
/// measures the drift of the temperature and the deviation of the moments
/// from `4 pi f(T_m)`.
pub fn equilibrium_check(
    steps: usize,
    sigma: f64,
    cells: [usize; 3],
    degree: usize,
) -> Result<EquilibriumReport, HarnessError> {
    let params = crate::model::PhysicalParams::default();
    let t_m = params.t_m;
    let phi_eq = 4.0 * std::f64::consts::PI * params.black_body(t_m);
    let problem = crate::integrator::Problem {
        params,
        model: crate::model::ConductivityModel::identity(),
        initial: Arc::new(move |_| t_m),
        initial_div_m_grad: Some(Arc::new(|_| 0.0)),
        sources: None,
    };
    let mesh = Arc::new(TetMesh::build_box_mesh([[0.0, 1.0]; 3], cells)?);
    let t_space = FemSpace::new(mesh.clone(), degree)?;
    let phi_space = FemSpace::new(mesh, degree.saturating_sub(1).max(1))?;
    let config = IntegratorConfig::new(sigma, sigma * steps as f64);
    let mut stepper = Stepper::new(problem, t_space, phi_space, config)?;
    let mut max_t_drift = 0.0f64;
    let mut max_phi_dev = 0.0f64;
    stepper.run(|s| {
        for &c in &s.state.t_n.coeffs {
            max_t_drift = max_t_drift.max((c - t_m).abs() / t_m);
        }
        for phi in &s.state.phi_n {
            for &c in &phi.coeffs {
                max_phi_dev = max_phi_dev.max((c - phi_eq).abs() / phi_eq);
            }
        }
    })?;
    Ok(EquilibriumReport {
        max_t_drift_rel: max_t_drift,
        max_phi_dev_rel: max_phi_dev,
        steps,
    })
}

/// Writes a `key=value` summary block.
pub fn write_summary(w: &mut impl std::io::Write, entries: &[(&str, String)]) -> std::io::Result<()> {
    for (k, v) in entries {
        writeln!(w, "{k}={v}")?;
    }
    Ok(())
}
