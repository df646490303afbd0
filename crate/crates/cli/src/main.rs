//! Command-line driver for the radiation-conduction solver: single runs,
//! convergence studies, the unified-vs-mixed comparison, the equilibrium
//! fixed-point check and mesh inspection.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sp3fem::config::FileConfig;
use sp3fem::harness::{
    self, compare_unified_mixed, converge_space, converge_time, equilibrium_check, run_case,
    RunSpec,
};
use sp3fem::integrator::IntegratorConfig;
use sp3fem::mesh::TetMesh;
use sp3fem::mms;

/// Exit code signalling a failed acceptance-style check.
const EXIT_FAIL: i32 = 2;

#[derive(Parser)]
#[command(name = "sp3fem", version, about = "SP3 radiation-conduction solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Benchmark preset: example1 | example2 | example3
    #[arg(long, default_value = "example1")]
    preset: String,
    /// Temperature polynomial degree p (moments use p-1 unless --unified).
    #[arg(long, default_value_t = 2)]
    p: usize,
    /// Moments at degree p instead of p-1.
    #[arg(long)]
    unified: bool,
    /// TOML configuration overriding model/solver/integrator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for report.csv, steps.csv, snapshots and summary.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Evaluate error norms every k-th step.
    #[arg(long)]
    error_stride: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration and write logs and snapshots.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Dyadic mesh level m (2^m cells per axis, h label 2^-m).
        #[arg(long, default_value_t = 2)]
        h_level: u32,
        #[arg(long, default_value_t = 1e-3)]
        sigma: f64,
        /// Final time (defaults to the preset's horizon).
        #[arg(long)]
        t_final: Option<f64>,
        /// Times at which VTK snapshots are written.
        #[arg(long, value_delimiter = ',')]
        snapshot_times: Vec<f64>,
    },
    /// Spatial convergence study over mesh levels at fixed sigma.
    ConvergeSpace {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [1u32, 2, 3])]
        h_levels: Vec<u32>,
        #[arg(long, default_value_t = 1e-4)]
        sigma: f64,
        #[arg(long)]
        t_final: Option<f64>,
    },
    /// Temporal convergence study over time steps at a fixed mesh level.
    ConvergeTime {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 2)]
        h_level: u32,
        #[arg(long, value_delimiter = ',', default_values_t = [4e-3, 2e-3, 1e-3, 5e-4])]
        sigma_levels: Vec<f64>,
        #[arg(long)]
        t_final: Option<f64>,
    },
    /// Same problem with moments at degree p and p-1: errors and CPU times.
    CompareUnified {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 2)]
        h_level: u32,
        #[arg(long, default_value_t = 1e-3)]
        sigma: f64,
        #[arg(long)]
        t_final: Option<f64>,
    },
    /// Radiative equilibrium fixed point: T0 = T_m, drift must stay small.
    EquilibriumCheck {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        sigma: f64,
        #[arg(long, default_value_t = 1)]
        h_level: u32,
    },
    /// Mesh statistics for a generated or imported mesh.
    MeshInfo {
        /// Dyadic level of the generated unit-cube mesh.
        #[arg(long, default_value_t = 2)]
        h_level: u32,
        /// Import a mesh from the plain-text format instead.
        #[arg(long)]
        import: Option<PathBuf>,
        /// Export the generated mesh to the plain-text format.
        #[arg(long)]
        export: Option<PathBuf>,
    },
}

fn load_case(common: &CommonArgs) -> Result<mms::RunCase> {
    let mut case = mms::case_by_name(&common.preset)
        .with_context(|| format!("unknown preset '{}'", common.preset))?;
    if let Some(path) = &common.config {
        let cfg = sp3fem::config::load(path)?;
        cfg.apply_model(&mut case.problem.params, &mut case.problem.model)?;
        if case.name == "example1" {
            // parameter overrides invalidate the preset's manufactured sources
            let exact = case.exact.clone().expect("example1 has an exact solution");
            case.problem.sources = Some(mms::manufactured_sources(
                &exact,
                &case.problem.params,
                &case.problem.model,
            ));
        }
    }
    Ok(case)
}

fn build_config(
    common: &CommonArgs,
    sigma: f64,
    t_final: f64,
) -> Result<(IntegratorConfig, FileConfig)> {
    let mut config = IntegratorConfig::new(sigma, t_final);
    let file = match &common.config {
        Some(path) => sp3fem::config::load(path)?,
        None => FileConfig::default(),
    };
    file.apply_integrator(&mut config)?;
    // explicit CLI flags win over the file
    config.sigma = sigma;
    config.t_final = t_final;
    Ok((config, file))
}

fn write_summary(out: &Path, entries: &[(&str, String)]) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut file = std::fs::File::create(out.join("summary"))?;
    harness::write_summary(&mut file, entries)?;
    for (k, v) in entries {
        println!("{k}={v}");
    }
    Ok(())
}

fn finish(out: &Path, pass: bool, mut entries: Vec<(&'static str, String)>) -> Result<i32> {
    entries.push(("pass", pass.to_string()));
    write_summary(out, &entries)?;
    Ok(if pass { 0 } else { EXIT_FAIL })
}

fn cmd_run(
    common: CommonArgs,
    h_level: u32,
    sigma: f64,
    t_final: Option<f64>,
    snapshot_times: Vec<f64>,
) -> Result<i32> {
    let case = load_case(&common)?;
    let t_f = t_final.unwrap_or(case.t_final);
    let (config, file) = build_config(&common, sigma, t_f)?;
    let mut spec = RunSpec::new(RunSpec::level_cells(h_level), common.p, config);
    spec.unified = common.unified;
    spec.error_stride = common
        .error_stride
        .or(file.output.error_stride)
        .unwrap_or(1);
    spec.snapshot_times = if snapshot_times.is_empty() {
        file.output.snapshot_times.clone().unwrap_or_default()
    } else {
        snapshot_times
    };
    let out_dir = common.out.clone();
    std::fs::create_dir_all(&out_dir)?;
    let output = run_case(&case, &spec)?;

    let mut steps = std::fs::File::create(out_dir.join("steps.csv"))?;
    output.log.write_csv(&mut steps)?;
    for w in &output.log.warnings {
        eprintln!("warning: {w}");
    }
    for (i, snap) in output.snapshots.iter().enumerate() {
        let path = out_dir.join(format!("snapshot_{i:04}.vtk"));
        let mut f = std::fs::File::create(&path)?;
        sp3fem::vtk::write_vtk(
            &mut f,
            &snap.temperature.space.mesh,
            &[
                ("temperature", &snap.temperature),
                ("phi1", &snap.phi[0]),
                ("phi2", &snap.phi[1]),
            ],
        )?;
    }
    let mut entries = vec![
        ("preset", case.name.clone()),
        ("p", common.p.to_string()),
        ("h_level", h_level.to_string()),
        ("sigma", format!("{sigma:e}")),
        ("t_final", format!("{t_f:e}")),
        ("norm_T_h", format!("{:.6e}", output.norms.t_h)),
        ("norm_phi_h", format!("{:.6e}", output.norms.phi_h)),
        ("cpu_seconds", format!("{:.3}", output.cpu_seconds)),
        (
            "max_stability_monitor",
            format!("{:.6e}", output.log.max_monitor()),
        ),
    ];
    if let (Some(et), Some(ep)) = (output.norms.err_t, output.norms.err_phi) {
        entries.push(("err_T", format!("{et:.6e}")));
        entries.push(("err_phi", format!("{ep:.6e}")));
    }
    let pass = output.final_temperature.is_finite();
    finish(&common.out, pass, entries)
}

fn cmd_converge_space(
    common: CommonArgs,
    h_levels: Vec<u32>,
    sigma: f64,
    t_final: Option<f64>,
) -> Result<i32> {
    let case = load_case(&common)?;
    let t_f = t_final.unwrap_or(case.t_final);
    let (config, file) = build_config(&common, sigma, t_f)?;
    let stride = common
        .error_stride
        .or(file.output.error_stride)
        .unwrap_or(1);
    std::fs::create_dir_all(&common.out)?;
    match converge_space(&case, common.p, &h_levels, &config, common.unified, stride) {
        Ok(report) => {
            let mut f = std::fs::File::create(common.out.join("report.csv"))?;
            report.write_csv(&mut f)?;
            let orders: Vec<String> = report
                .rows
                .iter()
                .filter_map(|r| r.co_t)
                .map(|v| format!("{v:.4}"))
                .collect();
            let pass = report.rows.iter().all(|r| r.err_t.is_finite());
            finish(
                &common.out,
                pass,
                vec![("study", "space".to_string()), ("co_T", orders.join(";"))],
            )
        }
        Err(e) => finish(
            &common.out,
            false,
            vec![("study", "space".to_string()), ("error", e.to_string())],
        ),
    }
}

fn cmd_converge_time(
    common: CommonArgs,
    h_level: u32,
    sigma_levels: Vec<f64>,
    t_final: Option<f64>,
) -> Result<i32> {
    let case = load_case(&common)?;
    let t_f = t_final.unwrap_or(case.t_final);
    let (config, file) = build_config(&common, sigma_levels[0], t_f)?;
    let stride = common
        .error_stride
        .or(file.output.error_stride)
        .unwrap_or(1);
    std::fs::create_dir_all(&common.out)?;
    match converge_time(
        &case,
        common.p,
        h_level,
        &sigma_levels,
        &config,
        common.unified,
        stride,
    ) {
        Ok(report) => {
            let mut f = std::fs::File::create(common.out.join("report.csv"))?;
            report.write_csv(&mut f)?;
            let pass = report.rows.iter().all(|r| r.err_t.is_finite());
            let orders: Vec<String> = report
                .rows
                .iter()
                .filter_map(|r| r.co_t)
                .map(|v| format!("{v:.4}"))
                .collect();
            finish(
                &common.out,
                pass,
                vec![("study", "time".to_string()), ("co_T", orders.join(";"))],
            )
        }
        Err(e) => finish(
            &common.out,
            false,
            vec![("study", "time".to_string()), ("error", e.to_string())],
        ),
    }
}

fn cmd_compare_unified(
    common: CommonArgs,
    h_level: u32,
    sigma: f64,
    t_final: Option<f64>,
) -> Result<i32> {
    let case = load_case(&common)?;
    let t_f = t_final.unwrap_or(case.t_final);
    let (config, _) = build_config(&common, sigma, t_f)?;
    std::fs::create_dir_all(&common.out)?;
    match compare_unified_mixed(&case, common.p, h_level, &config) {
        Ok(rows) => {
            let unified = &rows[0];
            let mixed = &rows[1];
            let cpu_trend = mixed.cpu_seconds < unified.cpu_seconds;
            let err_trend = mixed.err_t <= 1.5 * unified.err_t;
            let entries = vec![
                ("unified_scheme", unified.scheme.clone()),
                ("unified_err_T", format!("{:.6e}", unified.err_t)),
                ("unified_cpu_s", format!("{:.3}", unified.cpu_seconds)),
                ("mixed_scheme", mixed.scheme.clone()),
                ("mixed_err_T", format!("{:.6e}", mixed.err_t)),
                ("mixed_cpu_s", format!("{:.3}", mixed.cpu_seconds)),
                ("cpu_trend_mixed_faster", cpu_trend.to_string()),
                ("err_trend_within_1_5x", err_trend.to_string()),
            ];
            finish(&common.out, cpu_trend && err_trend, entries)
        }
        Err(e) => finish(&common.out, false, vec![("error", e.to_string())]),
    }
}

fn cmd_equilibrium(common: CommonArgs, steps: usize, sigma: f64, h_level: u32) -> Result<i32> {
    let n = 1usize << h_level;
    let report = equilibrium_check(steps, sigma, [n, n, n], common.p)?;
    let phi_eq = 4.0
        * std::f64::consts::PI
        * sp3fem::model::PhysicalParams::default().black_body(300.0);
    let pass = report.max_t_drift_rel <= 1e-3 && report.max_phi_dev_rel <= 5e-4;
    finish(
        &common.out,
        pass,
        vec![
            ("steps", steps.to_string()),
            ("sigma", format!("{sigma:e}")),
            ("max_T_drift_rel", format!("{:.6e}", report.max_t_drift_rel)),
            ("max_phi_dev_rel", format!("{:.6e}", report.max_phi_dev_rel)),
            ("phi_equilibrium", format!("{phi_eq:.4}")),
        ],
    )
}

fn cmd_mesh_info(h_level: u32, import: Option<PathBuf>, export: Option<PathBuf>) -> Result<i32> {
    let mesh = match &import {
        Some(path) => {
            let (mesh, warnings) = TetMesh::import_text(path)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            mesh
        }
        None => {
            let n = 1usize << h_level;
            TetMesh::build_box_mesh([[0.0, 1.0]; 3], [n, n, n])?
        }
    };
    if let Some(path) = export {
        let mut f = std::fs::File::create(&path)?;
        mesh.export_text(&mut f)?;
        println!("exported={}", path.display());
    }
    println!("vertices={}", mesh.num_vertices());
    println!("tets={}", mesh.num_tets());
    println!("boundary_faces={}", mesh.boundary_faces.len());
    println!("h={:.6e}", mesh.h);
    println!("volume={:.12e}", mesh.total_volume());
    println!("boundary_area={:.12e}", mesh.boundary_area());
    for p in 1..=4 {
        let space = sp3fem::spaces::FemSpace::new(Arc::new(mesh.clone()), p)?;
        println!("dofs_p{}={}", p, space.num_dofs);
    }
    Ok(0)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            common,
            h_level,
            sigma,
            t_final,
            snapshot_times,
        } => cmd_run(common, h_level, sigma, t_final, snapshot_times)?,
        Command::ConvergeSpace {
            common,
            h_levels,
            sigma,
            t_final,
        } => cmd_converge_space(common, h_levels, sigma, t_final)?,
        Command::ConvergeTime {
            common,
            h_level,
            sigma_levels,
            t_final,
        } => {
            if sigma_levels.is_empty() {
                bail!("--sigma-levels must not be empty");
            }
            cmd_converge_time(common, h_level, sigma_levels, t_final)?
        }
        Command::CompareUnified {
            common,
            h_level,
            sigma,
            t_final,
        } => cmd_compare_unified(common, h_level, sigma, t_final)?,
        Command::EquilibriumCheck {
            common,
            steps,
            sigma,
            h_level,
        } => cmd_equilibrium(common, steps, sigma, h_level)?,
        Command::MeshInfo {
            h_level,
            import,
            export,
        } => cmd_mesh_info(h_level, import, export)?,
    };
    std::process::exit(code);
}
