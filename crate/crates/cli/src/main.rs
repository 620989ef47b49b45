use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Parser, Subcommand};

use riccilab::diagnostics::DiagnosticsRecord;
use riccilab::geometry;
use riccilab::lab::{self, io, ExperimentConfig};
use riccilab::nodal;
use riccilab::spectral;

const EXIT_FAIL: u8 = 1;
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "riccilab", version, about = "Lambda-functional and Ricci flow experiments on flat tori")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment. Exit status 0 on PASS, 1 on FAIL, 2 on error.
    Run(RunArgs),
    /// Describe a snapshot file or a run directory.
    Inspect {
        path: PathBuf,
    },
    /// Run one child process per combination of seeds, resolutions and amplitudes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',')]
        resolutions: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        amplitudes: Vec<f64>,
        /// Concurrent child processes.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        quiet: bool,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the grid resolution on every axis.
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    amplitude: Option<f64>,
    /// Use the sequential kernels.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Run(args) => run(args),
        Cmd::Inspect { path } => match inspect(&path) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_ERROR)
            }
        },
        Cmd::Sweep {
            config,
            out_dir,
            seeds,
            resolutions,
            amplitudes,
            jobs,
            quiet,
        } => sweep(&config, &out_dir, &seeds, &resolutions, &amplitudes, jobs, quiet),
    }
}

fn run(args: RunArgs) -> ExitCode {
    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(EXIT_ERROR);
        }
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.resolution {
        cfg.set_resolution(n);
    }
    if let Some(a) = args.amplitude {
        cfg.perturbation.amplitude = a;
    }
    if args.sequential {
        riccilab::exec::set_mode(riccilab::exec::Mode::Sequential);
    }
    let out = lab::output_dir(&cfg, args.out_dir.as_deref());
    let quiet = args.quiet;
    let log = move |s: &str| {
        if !quiet {
            eprintln!("{s}");
        }
    };
    match lab::run(&cfg, out.as_deref(), &log) {
        Ok(outcome) => {
            let s = &outcome.summary;
            println!("{} {} {}", s.experiment, s.verdict, s.terminal_reason);
            for c in &s.checks {
                if !quiet || !c.pass {
                    println!("  {:<24} {:>12.4e}  limit {:.1e}  {}", c.name, c.value, c.limit, if c.pass { "ok" } else { "FAIL" });
                }
            }
            if s.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(dir) = &out {
                eprintln!("partial outputs in {}", dir.display());
            }
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn inspect(path: &Path) -> riccilab::Result<()> {
    if path.is_dir() {
        let summary = std::fs::read_to_string(path.join("summary.json"))?;
        let v: serde_json::Value =
            serde_json::from_str(&summary).map_err(|e| riccilab::Error::Config(e.to_string()))?;
        let field = |k: &str| v.get(k).map(|x| x.to_string()).unwrap_or_else(|| "-".into());
        println!("experiment      {}", field("experiment"));
        println!("verdict         {}", field("verdict"));
        println!("terminal reason {}", field("terminal_reason"));
        println!("lambda final    {}", field("lambda_final"));
        println!("travel          {}", field("travel"));
        println!("theta fit       {}", field("theta_fit"));
        println!("wall time       {} s", field("wall_time"));
        if let Some(err) = v.get("error").filter(|e| !e.is_null()) {
            println!("error           {err}");
        }
        let csv = path.join("diagnostics.csv");
        if csv.exists() {
            let recs = io::read_records_csv(&csv)?;
            println!("records         {}", recs.len());
            if let Some(r) = recs.last() {
                print_record("last record", r);
            }
        }
        let snaps = path.join("snapshots");
        if snaps.is_dir() {
            let mut names: Vec<_> = std::fs::read_dir(&snaps)?
                .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
                .filter(|n| n.ends_with(".snap"))
                .collect();
            names.sort();
            println!("snapshots       {}", names.join(" "));
        }
        return Ok(());
    }
    let state = io::snapshot_read(path)?;
    let g = &state.g;
    let grid = g.grid();
    println!("dim             {}", grid.dim());
    println!("resolution      {:?}", grid.resolution());
    println!("periods         {:?}", grid.periods());
    println!("time            {}", state.t);
    let min_eig = (0..grid.node_count())
        .map(|p| nodal::min_eigenvalue(grid.dim(), &g.mat(p)))
        .fold(f64::INFINITY, f64::min);
    println!("min eigenvalue  {min_eig:.6e}");
    let ric = geometry::ricci(g)?;
    println!("max |Ric|       {:.6e}", geometry::max_tensor_norm(&ric, g)?);
    let spec = spectral::lambda_of(g, spectral::DEFAULT_TOL)?;
    println!("lambda          {:.16e}", spec.lambda);
    Ok(())
}

fn print_record(label: &str, r: &DiagnosticsRecord) {
    println!(
        "{label:<15} t={:.6} lambda={:.6e} grad={:.3e} max_ric={:.3e} dist={:.3e}",
        r.t, r.lambda, r.grad_norm, r.max_ric, r.dist_to_base_ck
    );
}

fn sweep(
    config: &Path,
    out_dir: &Path,
    seeds: &[u64],
    resolutions: &[usize],
    amplitudes: &[f64],
    jobs: usize,
    quiet: bool,
) -> ExitCode {
    let exe = match std::env::current_exe() {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let res: Vec<Option<usize>> = if resolutions.is_empty() { vec![None] } else { resolutions.iter().map(|&n| Some(n)).collect() };
    let amps: Vec<Option<f64>> = if amplitudes.is_empty() { vec![None] } else { amplitudes.iter().map(|&a| Some(a)).collect() };
    let mut cases = Vec::new();
    for &seed in seeds {
        for &n in &res {
            for &a in &amps {
                let mut name = format!("seed{seed}");
                if let Some(n) = n {
                    name.push_str(&format!("-n{n}"));
                }
                if let Some(a) = a {
                    name.push_str(&format!("-a{a}"));
                }
                let mut cmd = Command::new(&exe);
                cmd.arg("run")
                    .arg("--config")
                    .arg(config)
                    .arg("--out-dir")
                    .arg(out_dir.join(&name))
                    .arg("--seed")
                    .arg(seed.to_string())
                    .arg("--quiet");
                if let Some(n) = n {
                    cmd.arg("--resolution").arg(n.to_string());
                }
                if let Some(a) = a {
                    cmd.arg("--amplitude").arg(a.to_string());
                }
                cases.push((name, cmd));
            }
        }
    }
    let mut worst = 0u8;
    let mut lines = vec!["case,exit".to_string()];
    for batch in cases.chunks_mut(jobs.max(1)) {
        let children: Vec<_> = batch
            .iter_mut()
            .map(|(name, cmd)| {
                if !quiet {
                    eprintln!("start {name}");
                }
                (name.clone(), cmd.spawn())
            })
            .collect();
        for (name, child) in children {
            let code = match child.and_then(|mut c| c.wait()) {
                Ok(status) => status.code().map_or(EXIT_ERROR, |c| c as u8),
                Err(e) => {
                    eprintln!("{name}: {e}");
                    EXIT_ERROR
                }
            };
            if !quiet {
                eprintln!("done  {name}: exit {code}");
            }
            worst = worst.max(code);
            lines.push(format!("{name},{code}"));
        }
    }
    let table = lines.join("\n") + "\n";
    if let Err(e) = std::fs::create_dir_all(out_dir).map_err(riccilab::Error::from).and_then(|_| io::write_atomic(&out_dir.join("sweep.csv"), table.as_bytes())) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_ERROR);
    }
    print!("{table}");
    ExitCode::from(worst)
}
