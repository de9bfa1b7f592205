use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use attestnet_sim::runner::{self, RunOutcome};
use attestnet_sim::scenario::Scenario;

#[derive(Parser)]
#[command(name = "attestnet", about = "Deterministic swarm-attestation simulator")]
struct Cli {
    /// Output directory; defaults to $ATTESTNET_OUT or ./attestnet-out
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the scenario seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its artifacts
    Run { scenario: PathBuf },
    /// Run a scenario template across a parameter grid
    Sweep {
        template: PathBuf,
        /// Axis as key=v1,v2,…; repeatable. Keys: n, o, seed, probability, fraction
        #[arg(long)]
        grid: Vec<String>,
    },
    /// Validate a scenario file without running it
    Check { scenario: PathBuf },
}

fn out_root(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| {
        std::env::var_os("ATTESTNET_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("attestnet-out"))
    })
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, ExitCode> {
    match Scenario::load(path) {
        Ok(mut sc) => {
            if let Some(s) = seed {
                sc.seed = s;
            }
            if let Err(e) = runner::validate_bounds(&sc) {
                eprintln!("{}: {e}", path.display());
                return Err(ExitCode::from(2));
            }
            Ok(sc)
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            Err(ExitCode::from(2))
        }
    }
}

fn print_outcome(sc: &Scenario, out: &RunOutcome) {
    println!(
        "{}: n={} o={} seed={} wall={}ms",
        sc.name, sc.swarm.n, sc.swarm.overlays, sc.seed, out.wall_ms
    );
    for (k, v) in out.metrics.values() {
        println!("  {k} = {v}");
    }
    for a in &out.asserts {
        let range = match (a.bound.min, a.bound.max) {
            (Some(lo), Some(hi)) => format!("[{lo}, {hi}]"),
            (Some(lo), None) => format!(">= {lo}"),
            (None, Some(hi)) => format!("<= {hi}"),
            (None, None) => String::from("(empty)"),
        };
        println!(
            "{} {} = {} expected {range}",
            if a.pass { "PASS" } else { "FAIL" },
            a.bound.metric,
            a.value
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let root = out_root(&cli);
    match &cli.cmd {
        Cmd::Check { scenario } => {
            let sc = match load(scenario, cli.seed) {
                Ok(sc) => sc,
                Err(code) => return code,
            };
            println!(
                "ok {} n={} o={} seed={} digest={}",
                sc.name,
                sc.swarm.n,
                sc.swarm.overlays,
                sc.seed,
                sc.config_digest()
            );
            ExitCode::SUCCESS
        }
        Cmd::Run { scenario } => {
            let sc = match load(scenario, cli.seed) {
                Ok(sc) => sc,
                Err(code) => return code,
            };
            let dir = root.join(&sc.name);
            match runner::run_to_dir(&sc, &dir) {
                Ok(out) => {
                    print_outcome(&sc, &out);
                    println!("artifacts: {}", dir.display());
                    if out.pass {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("{}: {e}", sc.name);
                    ExitCode::from(2)
                }
            }
        }
        Cmd::Sweep { template, grid } => {
            let sc = match load(template, cli.seed) {
                Ok(sc) => sc,
                Err(code) => return code,
            };
            let mut axes = Vec::new();
            for g in grid {
                match runner::parse_axis(g) {
                    Ok(a) => axes.push(a),
                    Err(e) => {
                        eprintln!("{e}");
                        return ExitCode::from(2);
                    }
                }
            }
            let dir = root.join(&sc.name);
            match runner::sweep_to_dir(&sc, &axes, &dir) {
                Ok(points) => {
                    let mut all_pass = true;
                    for p in &points {
                        match &p.result {
                            Ok(o) => {
                                println!(
                                    "{} n={} o={} seed={}: {} ({}ms)",
                                    p.scenario.name,
                                    p.scenario.swarm.n,
                                    p.scenario.swarm.overlays,
                                    p.scenario.seed,
                                    if o.pass { "PASS" } else { "FAIL" },
                                    o.wall_ms
                                );
                                all_pass &= o.pass;
                            }
                            Err(e) => {
                                println!(
                                    "{} n={} o={}: ERROR {e}",
                                    p.scenario.name, p.scenario.swarm.n, p.scenario.swarm.overlays
                                );
                                all_pass = false;
                            }
                        }
                    }
                    println!("artifacts: {}", dir.display());
                    if all_pass {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("{}: {e}", sc.name);
                    ExitCode::from(2)
                }
            }
        }
    }
}
