//! The five verbs. Each writes its outputs under `config.out`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use lfda::criteria::{compute_criteria, CriteriaReport};
use lfda::posterior::{summarize, AxisSummary, SummaryOptions};
use lfda::random::stream;
use lfda::sampler::{run_chain, MH_PARAMETERS};
use lfda::simgen::{generate_with_smoothing, run_experiment, run_selection, Candidate, FitConfig};
use lfda::splines::build_basis;
use lfda::Axis;
use nalgebra::DVector;

use crate::config::{Experiment, RunConfig};
use crate::container::{read_container, write_container, ContainerHeader, VERSION};
use crate::error::{CliError, Result};
use crate::io::{atomic_write, dataset_digest, fmt, load_dataset, save_dataset, write_csv};

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out.join(name)
}

/// Record the effective configuration next to the outputs.
fn write_provenance(cfg: &RunConfig, verb: &str) -> Result<()> {
    let text = format!("# lfda {verb}, version {}\n{}", env!("CARGO_PKG_VERSION"), cfg.to_toml());
    atomic_write(&out_path(cfg, &format!("{verb}_config.toml")), text.as_bytes())
}

fn axis_name(a: Axis) -> &'static str {
    match a {
        Axis::S => "s",
        Axis::T => "t",
    }
}

/// Simulated dataset plus ground truth on the grid.
pub fn simulate(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    cfg.prepare_out()?;
    write_provenance(cfg, "simulate")?;
    let mut rng = stream(cfg.seed, 0);
    let (data, truth) = generate_with_smoothing(&cfg.scenario, (&cfg.basis_s, &cfg.basis_t), &mut rng)?;
    save_dataset(&out_path(cfg, "data.csv"), &data)?;

    let (s, t) = (&truth.s_grid, &truth.t_grid);
    let ns = s.len();
    let mut rows = Vec::new();
    for (k, &tv) in t.iter().enumerate() {
        for (j, &sv) in s.iter().enumerate() {
            rows.push(vec![fmt(sv), fmt(tv), fmt(truth.mean[(j, k)])]);
        }
    }
    write_csv(&out_path(cfg, "truth_mean.csv"), &["s", "t", "value"], rows)?;

    let g = &truth.kernel.gram;
    let rows = (0..g.ncols()).flat_map(|b| {
        (0..g.nrows()).map(move |a| vec![fmt(s[a % ns]), fmt(t[a / ns]), fmt(s[b % ns]), fmt(t[b / ns]), fmt(g[(a, b)])])
    });
    write_csv(&out_path(cfg, "truth_kernel.csv"), &["s", "t", "s2", "t2", "value"], rows)?;

    for (name, points, m) in [("s", s, &truth.marginal_s), ("t", t, &truth.marginal_t)] {
        let rows = (0..m.ncols()).flat_map(|b| (0..m.nrows()).map(move |a| vec![fmt(points[a]), fmt(points[b]), fmt(m[(a, b)])]));
        let h2 = format!("{name}2");
        write_csv(&out_path(cfg, &format!("truth_marginal_{name}.csv")), &[name, h2.as_str(), "value"], rows)?;
    }

    let mut rows = Vec::new();
    for (name, points, f) in [("s", s, &truth.psi), ("t", t, &truth.phi)] {
        for c in 0..f.ncols() {
            for (j, &x) in points.iter().enumerate() {
                rows.push(vec![name.to_string(), (c + 1).to_string(), fmt(x), fmt(f[(j, c)])]);
            }
        }
    }
    write_csv(&out_path(cfg, "truth_eigenfunctions.csv"), &["axis", "component", "point", "value"], rows)
}

/// Run the chains and persist draws and diagnostics. Outputs are written
/// before a chain failure is reported.
pub fn fit(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let data_path = RunConfig::require_file(cfg.data.as_ref(), "dataset")?;
    cfg.prepare_out()?;
    write_provenance(cfg, "fit")?;
    let data = load_dataset(&data_path)?;
    let b1 = build_basis(&cfg.basis_s, &data.s_grid).map_err(|e| CliError::Config(format!("basis_s: {e}")))?;
    let b2 = build_basis(&cfg.basis_t, &data.t_grid).map_err(|e| CliError::Config(format!("basis_t: {e}")))?;
    cfg.hyper.validate(b1.dim(), b2.dim()).map_err(|e| CliError::Config(e.to_string()))?;
    let draws = run_chain(&data, &cfg.hyper, &cfg.basis_s, &cfg.basis_t, &cfg.chain)?;

    let header = ContainerHeader {
        version: VERSION,
        dims: draws.dims,
        seed: cfg.seed,
        n_chains: cfg.chain.n_chains,
        dataset_digest: dataset_digest(&data)?,
        basis_s: cfg.basis_s.clone(),
        basis_t: cfg.basis_t.clone(),
        s_grid: data.s_grid.clone(),
        t_grid: data.t_grid.clone(),
        covariate_mean: data.mean_covariate().iter().copied().collect(),
    };
    write_container(&out_path(cfg, "draws.lfd"), &header, &draws.draws)?;

    let mut header = vec!["chain".to_string()];
    header.extend(MH_PARAMETERS.iter().map(|p| format!("accept_{p}")));
    header.extend(MH_PARAMETERS.iter().map(|p| format!("step_sd_{p}")));
    header.extend(["rescale_accept", "truncation_fallbacks", "stored_draws", "failed_at", "failure"].map(String::from));
    let rows = draws.chains.iter().map(|c| {
        let mut row = vec![c.chain_id.to_string()];
        row.extend(c.acceptance_rates.iter().map(|&v| fmt(v)));
        row.extend(c.final_step_sd.iter().map(|&v| fmt(v)));
        row.push(fmt(c.rescale_acceptance));
        row.push(c.truncation_fallbacks.to_string());
        row.push(draws.draws.iter().filter(|d| d.chain_id == c.chain_id).count().to_string());
        match &c.failure {
            Some(f) => row.extend([f.iteration.to_string(), f.message.clone()]),
            None => row.extend([String::new(), String::new()]),
        }
        row
    });
    write_csv(&out_path(cfg, "diagnostics.csv"), &header, rows)?;
    let rows = draws.chains.iter().flat_map(|c| {
        c.log_likelihood_trace
            .iter()
            .enumerate()
            .map(move |(it, &v)| vec![c.chain_id.to_string(), (it + 1).to_string(), fmt(v)])
    });
    write_csv(&out_path(cfg, "loglik_trace.csv"), &["chain", "iteration", "log_likelihood"], rows)?;

    let failed: Vec<String> = draws
        .failed_chains()
        .map(|c| {
            let f = c.failure.as_ref().expect("failed chains carry a failure");
            format!("chain {} at iteration {}: {}", c.chain_id, f.iteration, f.message)
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Chain(failed.join("; ")))
    }
}

fn single_draw_file(cfg: &RunConfig) -> Result<PathBuf> {
    match cfg.draws.as_slice() {
        [one] => RunConfig::require_file(Some(one), "draw file"),
        [] => Err(CliError::Config("no draw file given".into())),
        _ => Err(CliError::Config("summarize takes exactly one draw file".into())),
    }
}

/// Posterior summaries of one draw file, one CSV per object.
pub fn summarize_command(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let path = single_draw_file(cfg)?;
    cfg.prepare_out()?;
    write_provenance(cfg, "summarize")?;
    let file = read_container(&path)?;
    let h = &file.header;
    let sc = &cfg.summary;
    let options = SummaryOptions {
        s_points: sc.s_points.clone().unwrap_or_else(|| h.s_grid.clone()),
        t_points: sc.t_points.clone().unwrap_or_else(|| h.t_grid.clone()),
        covariate: DVector::from_vec(sc.covariate.clone().unwrap_or_else(|| h.covariate_mean.clone())),
        alpha: sc.alpha,
        n_components: sc.n_components,
        quadrature: sc.quadrature,
        full_kernel: sc.full_kernel,
    };
    if options.covariate.len() != h.dims.d {
        return Err(CliError::Config(format!(
            "summary covariate has {} entries, the model has {}",
            options.covariate.len(),
            h.dims.d
        )));
    }
    let summary = summarize(&file.draws, &options)?;
    let (s, t) = (&summary.s_points, &summary.t_points);
    let ns = s.len();

    let m = &summary.mean;
    let rows = (0..m.center.len()).map(|a| {
        vec![
            fmt(s[a % ns]),
            fmt(t[a / ns]),
            fmt(m.center[a]),
            fmt(m.lower[a]),
            fmt(m.upper[a]),
            fmt(m.sd[a]),
        ]
    });
    write_csv(&out_path(cfg, "mean_surface.csv"), &["s", "t", "center", "lower", "upper", "sd"], rows)?;

    if let Some(k) = &summary.kernel {
        let g = &k.gram;
        let rows = (0..g.ncols()).flat_map(|b| {
            (0..g.nrows()).map(move |a| vec![fmt(s[a % ns]), fmt(t[a / ns]), fmt(s[b % ns]), fmt(t[b / ns]), fmt(g[(a, b)])])
        });
        write_csv(&out_path(cfg, "kernel.csv"), &["s", "t", "s2", "t2", "value"], rows)?;
    }

    let axes: [&AxisSummary; 2] = [&summary.marginal_s, &summary.marginal_t];
    for ax in axes {
        let name = axis_name(ax.axis);
        let (p, m) = (&ax.points, &ax.mean_covariance);
        let rows = (0..m.ncols()).flat_map(|b| (0..m.nrows()).map(move |a| vec![fmt(p[a]), fmt(p[b]), fmt(m[(a, b)])]));
        let h2 = format!("{name}2");
        write_csv(&out_path(cfg, &format!("marginal_{name}.csv")), &[name, h2.as_str(), "value"], rows)?;
    }

    let mut values = Vec::new();
    let mut functions = Vec::new();
    for ax in axes {
        let name = axis_name(ax.axis);
        for (c, band) in ax.eigenfunctions.iter().enumerate() {
            values.push(vec![
                name.to_string(),
                (c + 1).to_string(),
                fmt(ax.eigenvalues[c]),
                fmt(ax.eigenvalue_lower[c]),
                fmt(ax.eigenvalue_upper[c]),
                ax.crossings[c].to_string(),
                ax.clamped_draws.to_string(),
            ]);
            for (j, &x) in ax.points.iter().enumerate() {
                functions.push(vec![
                    name.to_string(),
                    (c + 1).to_string(),
                    fmt(x),
                    fmt(band.center[j]),
                    fmt(band.lower[j]),
                    fmt(band.upper[j]),
                ]);
            }
        }
    }
    write_csv(
        &out_path(cfg, "eigenvalues.csv"),
        &["axis", "component", "mean", "lower", "upper", "crossings", "clamped_draws"],
        values,
    )?;
    write_csv(
        &out_path(cfg, "eigenfunctions.csv"),
        &["axis", "component", "point", "center", "lower", "upper"],
        functions,
    )
}

/// One criteria report per draw file, labelled by path.
pub fn criteria_reports(data_path: &Path, draw_paths: &[PathBuf]) -> Result<Vec<(String, CriteriaReport)>> {
    let data = load_dataset(data_path)?;
    let digest = hex::encode(dataset_digest(&data)?);
    let mut out = Vec::new();
    for p in draw_paths {
        let file = read_container(p)?;
        if file.header.digest_hex() != digest {
            return Err(CliError::HashMismatch {
                path: p.clone(),
                found: digest,
                expected: file.header.digest_hex(),
            });
        }
        let b1 = build_basis(&file.draws.basis_s, &data.s_grid)?;
        let b2 = build_basis(&file.draws.basis_t, &data.t_grid)?;
        out.push((p.display().to_string(), compute_criteria(&file.draws, &data, &b1, &b2)?));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Comparison table with the minimum of each criterion flagged.
pub fn criteria_command(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let data_path = RunConfig::require_file(cfg.data.as_ref(), "dataset")?;
    if cfg.draws.is_empty() {
        return Err(CliError::Config("no draw files given".into()));
    }
    for p in &cfg.draws {
        RunConfig::require_file(Some(p), "draw file")?;
    }
    cfg.prepare_out()?;
    write_provenance(cfg, "criteria")?;
    let reports = criteria_reports(&data_path, &cfg.draws)?;
    let min = |f: fn(&CriteriaReport) -> f64| reports.iter().map(|(_, r)| f(r)).fold(f64::INFINITY, f64::min);
    let (dmin, b1min, b2min) = (min(|r| r.dic), min(|r| r.bic1), min(|r| r.bic2));
    let rows = reports.iter().map(|(label, r)| {
        vec![
            label.clone(),
            fmt(r.dic),
            fmt(r.bic1),
            fmt(r.bic2),
            fmt(r.p_dic),
            fmt(r.mean_deviance),
            fmt(r.plugin_deviance),
            r.n_fixed.to_string(),
            r.n_total.to_string(),
            r.n_obs.to_string(),
            r.n_subjects.to_string(),
            (r.dic == dmin).to_string(),
            (r.bic1 == b1min).to_string(),
            (r.bic2 == b2min).to_string(),
        ]
    });
    write_csv(
        &out_path(cfg, "criteria.csv"),
        &[
            "model",
            "dic",
            "bic1",
            "bic2",
            "p_dic",
            "mean_deviance",
            "plugin_deviance",
            "n_fixed",
            "n_total",
            "n_obs",
            "n_subjects",
            "min_dic",
            "min_bic1",
            "min_bic2",
        ],
        rows,
    )
}

/// Replicated simulation experiments.
pub fn benchmark(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    cfg.prepare_out()?;
    write_provenance(cfg, "benchmark")?;
    let bc = &cfg.benchmark;
    let start = Instant::now();
    match bc.experiment {
        Experiment::Errors => {
            let fit = FitConfig {
                basis_s: cfg.basis_s.clone(),
                basis_t: cfg.basis_t.clone(),
                hyper: cfg.hyper.clone(),
                chain: cfg.chain.clone(),
            };
            let report = run_experiment(&cfg.scenario, (!bc.empirical_only).then_some(&fit), bc.replications, cfg.seed)?;
            let rows = report.rows.iter().map(|r| {
                vec![
                    r.case.to_string(),
                    r.n.to_string(),
                    r.quantity.clone(),
                    r.estimator.clone(),
                    fmt(r.median),
                    fmt(r.q10),
                    fmt(r.q90),
                ]
            });
            write_csv(
                &out_path(cfg, "benchmark.csv"),
                &["case", "n", "quantity", "estimator", "median", "q10", "q90"],
                rows,
            )?;
            for (rep, msg) in &report.failures {
                eprintln!("replication {rep} failed: {msg}");
            }
        }
        Experiment::Selection => {
            let candidates = bc
                .candidates
                .iter()
                .map(|&(p1, p2)| Candidate::cubic(p1, p2))
                .collect::<lfda::error::Result<Vec<_>>>()
                .map_err(|e| CliError::Config(e.to_string()))?;
            let report = run_selection(&cfg.scenario, &candidates, &cfg.hyper, &cfg.chain, bc.replications, cfg.seed)?;
            let mut rows = Vec::new();
            for name in ["dic", "bic1", "bic2"] {
                let pick = |c: &lfda::simgen::CandidateSummary| match name {
                    "dic" => c.dic,
                    "bic1" => c.bic1,
                    _ => c.bic2,
                };
                let best = report.candidates.iter().map(|c| pick(c).0).fold(f64::INFINITY, f64::min);
                for c in &report.candidates {
                    let (m, se) = pick(c);
                    rows.push(vec![
                        c.label.clone(),
                        name.to_string(),
                        fmt(m),
                        fmt(se),
                        c.reports.len().to_string(),
                        (m == best).to_string(),
                    ]);
                }
            }
            write_csv(
                &out_path(cfg, "selection.csv"),
                &["model", "criterion", "mean", "se", "replications", "minimal"],
                rows,
            )?;
            for (rep, label, msg) in &report.failures {
                eprintln!("replication {rep}, model {label} failed: {msg}");
            }
        }
    }
    println!("benchmark finished in {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
