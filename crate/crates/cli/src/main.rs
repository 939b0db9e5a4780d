use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use gmrlm_core::config::{InversionConfig, TruthExample};
use gmrlm_core::gmm::{fit_em, write_model};
use gmrlm_core::grid::{GridSpec, ScattererField};
use gmrlm_core::helmholtz::{DataRecord, HelmholtzSolver};
use gmrlm_core::inversion::{run_inversion, synthesize_dataset, InversionInput, InversionSetup};
use gmrlm_core::io::{self, Manifest};
use gmrlm_core::learning::{
    error_samples_for_angles, example_params, gen_example, pool, true_scatterer_example1, true_scatterer_example2,
    ExampleParams, Family,
};
use gmrlm_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "gmrlm",
    version,
    about = "Inverse medium scattering with learned model-error compensation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one forward problem and dump the receiver data.
    Forward {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        kappa: f64,
        #[arg(long)]
        angle: f64,
        /// Receiver CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Scatterer field CSV; defaults to the configured truth.
        #[arg(long)]
        q: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = GridLevel::Coarse)]
        grid: GridLevel,
        /// Also dump the scattered field.
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Synthesize noisy data for every (kappa, angle) of the schedule on the reference grid.
    SynthData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Scatterer field CSV; defaults to the configured truth.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the training scatterers on the coarse grid, plus their parameters.
    GenExamples {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        family: Option<Family>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute fine-minus-coarse receiver errors of the training scatterers.
    LearnErrors {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `all`, or comma-separated zero-based wavenumber indices.
        #[arg(long, default_value = "all")]
        kappas: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one complex Gaussian mixture per error-sample file.
    FitGmm {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of `samples_k*.csv` files.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the recursive-linearization inversion on the coarse grid.
    Invert {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Truth field CSV for error tracking; defaults to the configured truth.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize an inversion run per wavenumber.
    Report {
        /// Output directory of `invert`.
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GridLevel {
    Coarse,
    Fine,
    Reference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Rlm,
    Gmrlm,
}

fn load_config(path: Option<&Path>) -> Result<InversionConfig> {
    match path {
        Some(p) => InversionConfig::load(p),
        None => Ok(InversionConfig::default()),
    }
}

fn level_size(cfg: &InversionConfig, level: GridLevel) -> usize {
    match level {
        GridLevel::Coarse => cfg.grid.coarse,
        GridLevel::Fine => cfg.grid.fine,
        GridLevel::Reference => cfg.grid.reference,
    }
}

fn solver_for(cfg: &InversionConfig, grid: GridSpec) -> Result<HelmholtzSolver> {
    HelmholtzSolver::new(grid, cfg.pml_profile(), cfg.solver.tol)
}

/// Truth on `grid`: from `file` (resampled when needed) or the configured example.
fn load_truth(cfg: &InversionConfig, file: Option<&Path>, grid: GridSpec) -> Result<Option<ScattererField>> {
    if let Some(f) = file {
        let q = io::read_scatterer(f, cfg.omega())?;
        return Ok(Some(if q.grid == grid {
            q
        } else {
            q.restrict_supported(&grid)?
        }));
    }
    Ok(match cfg.truth_example()? {
        TruthExample::Example1 => Some(true_scatterer_example1(grid)),
        TruthExample::Example2 => Some(true_scatterer_example2(grid)),
        TruthExample::None => None,
    })
}

fn require_truth(q: Option<ScattererField>) -> Result<ScattererField> {
    q.ok_or_else(|| Error::Config("`truth.example` is none and no truth file was given".into()))
}

fn forward(
    cfg_path: Option<&Path>,
    kappa: f64,
    angle: f64,
    out: &Path,
    q_file: Option<&Path>,
    level: GridLevel,
    field: Option<&Path>,
) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(cfg_path)?;
    let grid = cfg.grid_spec(level_size(&cfg, level))?;
    let q = require_truth(load_truth(&cfg, q_file, grid)?)?;
    let rx = cfg.receivers_for(&grid)?;
    let solver = solver_for(&cfg, grid)?;
    let op = solver.factorize(&q, kappa)?;
    let (values, us) = op.forward_data(angle, &rx)?;
    io::write_data_record(out, &rx, &DataRecord { kappa, angle, values })?;
    let mut m = Manifest::new("forward", cfg.dump());
    m.note("grid_nodes", grid.nx);
    m.note("kappa", format!("{kappa:e}"));
    m.note("angle", format!("{angle:e}"));
    m.inputs.extend(cfg_path.map(Path::to_path_buf));
    m.inputs.extend(q_file.map(Path::to_path_buf));
    m.outputs.push(out.to_path_buf());
    if let Some(f) = field {
        io::write_complex_field(f, &us)?;
        m.outputs.push(f.to_path_buf());
    }
    m.timing("total", t0.elapsed().as_secs_f64());
    m.write(
        out.parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new(".")),
    )?;
    Ok(())
}

fn synth_data(
    cfg_path: Option<&Path>,
    sigma: Option<f64>,
    seed: Option<u64>,
    truth: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let t0 = Instant::now();
    let mut cfg = load_config(cfg_path)?;
    if let Some(s) = sigma {
        cfg.noise.sigma = s;
    }
    if let Some(s) = seed {
        cfg.noise.seed = s;
    }
    cfg.validate()?;
    let grid = cfg.grid_spec(cfg.grid.reference)?;
    let q = require_truth(load_truth(&cfg, truth, grid)?)?;
    let rx = cfg.receivers_for(&grid)?;
    let solver = solver_for(&cfg, grid)?;
    let schedule = cfg.schedule()?;
    let data = synthesize_dataset(&solver, &q, &schedule, &rx, cfg.noise.sigma, cfg.noise.seed)?;
    io::ensure_dir(out)?;
    let mut m = Manifest::new("synth-data", cfg.dump());
    m.seed("noise", cfg.noise.seed);
    m.inputs.extend(cfg_path.map(Path::to_path_buf));
    m.inputs.extend(truth.map(Path::to_path_buf));
    let na = schedule.angles.len();
    for (n, rec) in data.records.iter().enumerate() {
        let path = out.join(io::data_file_name(n / na, n % na));
        io::write_data_record(&path, &rx, rec)?;
        m.outputs.push(path);
    }
    m.timing("total", t0.elapsed().as_secs_f64());
    m.write(out)?;
    Ok(())
}

fn params_line(n: usize, p: &ExampleParams) -> String {
    match p {
        ExampleParams::Bumps(rows) => {
            let cols: Vec<String> = rows.iter().flatten().map(|v| format!("{v:e}")).collect();
            format!("{n},gaussian_bumps,{}", cols.join(","))
        }
        ExampleParams::Square { cx, cy, side, height } => {
            format!("{n},random_square,{cx:e},{cy:e},{side:e},{height:e}")
        }
    }
}

fn gen_examples(
    cfg_path: Option<&Path>,
    family: Option<Family>,
    count: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let t0 = Instant::now();
    let mut cfg = load_config(cfg_path)?;
    if let Some(f) = family {
        cfg.learning.family = f.to_string();
    }
    if let Some(c) = count {
        cfg.learning.count = c;
    }
    if let Some(s) = seed {
        cfg.learning.seed = s;
    }
    cfg.validate()?;
    let spec = cfg.example_spec()?;
    let grid = cfg.grid_spec(cfg.grid.coarse)?;
    io::ensure_dir(out)?;
    let mut m = Manifest::new("gen-examples", cfg.dump());
    m.seed("learning", spec.seed);
    m.inputs.extend(cfg_path.map(Path::to_path_buf));
    let mut params = String::from("index,family,parameters\n");
    for n in 0..spec.count {
        let q = gen_example(&spec, n, grid)?;
        let path = out.join(format!("example_{n:04}.csv"));
        io::write_scatterer(&path, &q)?;
        m.outputs.push(path);
        params.push_str(&params_line(n, &example_params(&spec, n)?));
        params.push('\n');
    }
    let params_path = out.join("params.csv");
    io::write_text(&params_path, &params)?;
    m.outputs.push(params_path);
    m.timing("total", t0.elapsed().as_secs_f64());
    m.write(out)?;
    Ok(())
}

fn parse_kappa_indices(arg: &str, count: usize) -> Result<Vec<usize>> {
    if arg.trim() == "all" {
        return Ok((0..count).collect());
    }
    arg.split(',')
        .map(|t| {
            let i: usize = t
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("--kappas: `{t}` is not an index")))?;
            if i >= count {
                return Err(Error::Config(format!("--kappas: index {i} outside 0..{count}")));
            }
            Ok(i)
        })
        .collect()
}

fn learn_errors(cfg_path: Option<&Path>, kappas: &str, out: &Path) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(cfg_path)?;
    let schedule = cfg.schedule()?;
    let indices = parse_kappa_indices(kappas, schedule.kappas.len())?;
    let spec = cfg.example_spec()?;
    let fine_grid = cfg.grid_spec(cfg.grid.fine)?;
    let coarse_grid = cfg.grid_spec(cfg.grid.coarse)?;
    let rx = cfg.receivers_for(&coarse_grid)?;
    let fine = solver_for(&cfg, fine_grid)?;
    let coarse = solver_for(&cfg, coarse_grid)?;
    let angles = if cfg.learning.pool_angles {
        schedule.angles.clone()
    } else {
        vec![cfg.learning.angle]
    };
    io::ensure_dir(out)?;
    let mut m = Manifest::new("learn-errors", cfg.dump());
    m.seed("learning", spec.seed);
    m.inputs.extend(cfg_path.map(Path::to_path_buf));
    for ik in indices {
        let t = Instant::now();
        let (sets, failures) = error_samples_for_angles(&spec, schedule.kappas[ik], &angles, &fine, &coarse, &rx)?;
        let set = if cfg.learning.pool_angles {
            pool(&sets)?
        } else {
            sets.into_iter().next().expect("one training angle")
        };
        for f in &failures {
            eprintln!("warning: kappa index {ik}: example {} skipped: {}", f.index, f.message);
        }
        let path = out.join(io::samples_file_name(ik, None));
        io::write_samples(&path, &set)?;
        m.note(&format!("k{ik:03}.samples"), set.len());
        m.note(&format!("k{ik:03}.failures"), failures.len());
        m.outputs.push(path);
        m.timing(&format!("k{ik:03}"), t.elapsed().as_secs_f64());
    }
    m.timing("total", t0.elapsed().as_secs_f64());
    m.write(out)?;
    Ok(())
}

/// Wavenumber index encoded in `samples_k<ik>...csv`.
fn index_from_name(path: &Path) -> Result<usize> {
    path.file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("samples_k"))
        .and_then(|r| r.get(..3))
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| Error::Config(format!("cannot read the wavenumber index from {}", path.display())))
}

fn fit_gmm(cfg_path: Option<&Path>, samples_dir: &Path, out: &Path) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(cfg_path)?;
    let files = io::list_files(samples_dir, "samples_k", ".csv")?;
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no samples_k*.csv files in {}",
            samples_dir.display()
        )));
    }
    io::ensure_dir(out)?;
    let mut m = Manifest::new("fit-gmm", cfg.dump());
    m.seed("mixture", cfg.mixture.seed);
    m.inputs.extend(cfg_path.map(Path::to_path_buf));
    for f in &files {
        let t = Instant::now();
        let ik = index_from_name(f)?;
        let set = io::read_samples(f)?;
        let em = cfg.em_config(&set);
        let fit = fit_em(&set, &em)?;
        let path = out.join(io::model_file_name(ik));
        write_model(&path, &fit.model)?;
        let trace: String = fit.trace.iter().map(|v| format!("{v:e}\n")).collect();
        let trace_path = out.join(format!("em_trace_k{ik:03}.csv"));
        io::write_text(&trace_path, &format!("log_likelihood\n{trace}"))?;
        m.inputs.push(f.clone());
        m.outputs.push(path);
        m.outputs.push(trace_path);
        m.note(&format!("k{ik:03}.delta"), format!("{:e}", em.delta));
        m.note(&format!("k{ik:03}.converged"), fit.converged);
        m.note(&format!("k{ik:03}.restarts"), fit.restarts);
        m.note(&format!("k{ik:03}.iterations"), fit.trace.len());
        m.timing(&format!("k{ik:03}"), t.elapsed().as_secs_f64());
    }
    m.timing("total", t0.elapsed().as_secs_f64());
    m.write(out)?;
    Ok(())
}

fn invert(
    cfg_path: Option<&Path>,
    method: Method,
    data_dir: &Path,
    models_dir: Option<&Path>,
    truth: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(cfg_path)?;
    let grid = cfg.grid_spec(cfg.grid.coarse)?;
    let schedule = cfg.schedule()?;
    let (data, rx) = io::read_data_dir(data_dir)?;
    rx.check_inside(&grid, &cfg.pml_profile())?;
    let models = match (method, models_dir) {
        (Method::Gmrlm, Some(dir)) => Some(io::read_model_dir(dir)?),
        (Method::Gmrlm, None) => return Err(Error::Config("--method gmrlm needs --models".into())),
        (Method::Rlm, Some(_)) => return Err(Error::Config("--models is only used with --method gmrlm".into())),
        (Method::Rlm, None) => None,
    };
    let q_true = load_truth(&cfg, truth, grid)?;
    let solver = solver_for(&cfg, grid)?;
    let setup = InversionSetup {
        solver: &solver,
        receivers: &rx,
        reg: cfg.reg_config(),
        step: cfg.step_control()?,
    };
    let input = InversionInput {
        schedule: &schedule,
        data: &data,
        models: models.as_ref().map(|(set, _)| set),
        nu: cfg.nu_rule(),
        q_init: ScattererField::zeros(grid),
        q_true: q_true.as_ref(),
    };
    let report = run_inversion(&setup, &input)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    io::ensure_dir(out)?;
    let mut m = Manifest::new("invert", cfg.dump());
    m.note("method", format!("{method:?}").to_lowercase());
    m.inputs.extend(cfg_path.map(Path::to_path_buf));
    m.inputs.push(data_dir.to_path_buf());
    m.inputs.extend(truth.map(Path::to_path_buf));
    if let Some((_, files)) = &models {
        m.inputs.extend(files.iter().cloned());
    }
    let report_path = out.join("report.csv");
    io::write_text(&report_path, &io::report_to_string(&report))?;
    m.outputs.push(report_path);
    let final_path = out.join("q_final.csv");
    io::write_scatterer(&final_path, &report.final_q)?;
    m.outputs.push(final_path);
    for (i, snap) in report.snapshots.iter().enumerate() {
        let path = out.join(format!("q_after_k{i}.csv"));
        io::write_scatterer(&path, &snap.q)?;
        m.outputs.push(path);
        if let Some(e) = snap.rel_error {
            m.note(&format!("k{i}.rel_error"), format!("{e:e}"));
        }
    }
    for (n, w) in report.warnings.iter().enumerate() {
        m.note(&format!("warning{n}"), w);
    }
    m.timing("total", t0.elapsed().as_secs_f64());
    m.write(out)?;
    Ok(())
}

fn report(run: &Path) -> Result<()> {
    let rows = io::read_report(&run.join("report.csv"))?;
    let mut summary = String::from("kappa,updates,rejected,final_misfit,rel_error,seconds\n");
    let mut i = 0;
    while i < rows.len() {
        let kappa = rows[i].kappa;
        let group: Vec<_> = rows[i..].iter().take_while(|r| r.kappa == kappa).collect();
        let last = group[group.len() - 1];
        let rejected = group.iter().filter(|r| r.step == 0.0).count();
        let seconds: f64 = group.iter().map(|r| r.seconds).sum();
        let err = last.rel_error.map_or_else(|| "nan".to_string(), |e| format!("{e:e}"));
        summary.push_str(&format!(
            "{kappa:e},{},{rejected},{:e},{err},{seconds:e}\n",
            group.len(),
            last.misfit
        ));
        println!(
            "kappa {:8.4}  updates {:3}  rejected {:3}  misfit {:10.4e}  rel_error {}  {:7.2}s",
            kappa,
            group.len(),
            rejected,
            last.misfit,
            last.rel_error.map_or_else(|| "n/a".to_string(), |e| format!("{e:.4}")),
            seconds
        );
        i += group.len();
    }
    io::write_text(&run.join("summary.csv"), &summary)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Forward {
            config,
            kappa,
            angle,
            out,
            q,
            grid,
            field,
        } => forward(
            config.as_deref(),
            kappa,
            angle,
            &out,
            q.as_deref(),
            grid,
            field.as_deref(),
        ),
        Command::SynthData {
            config,
            sigma,
            seed,
            truth,
            out,
        } => synth_data(config.as_deref(), sigma, seed, truth.as_deref(), &out),
        Command::GenExamples {
            config,
            family,
            count,
            seed,
            out,
        } => gen_examples(config.as_deref(), family, count, seed, &out),
        Command::LearnErrors { config, kappas, out } => learn_errors(config.as_deref(), &kappas, &out),
        Command::FitGmm { config, samples, out } => fit_gmm(config.as_deref(), &samples, &out),
        Command::Invert {
            config,
            method,
            data,
            models,
            truth,
            out,
        } => invert(
            config.as_deref(),
            method,
            &data,
            models.as_deref(),
            truth.as_deref(),
            &out,
        ),
        Command::Report { run } => report(&run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
