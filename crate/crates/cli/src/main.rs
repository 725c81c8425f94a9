use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lqgame_cli::commands::{
    cmd_simulate, cmd_solve, cmd_verify, exit_code_of, Run, Settings, SimulateMode,
    SimulateOptions, DEFAULT_PATHS, DEFAULT_SEED, DEFAULT_STEPS,
};
use lqgame_cli::report::exit;

/// Solve, verify and simulate linear-quadratic zero-sum stochastic games.
#[derive(Parser, Debug)]
#[command(name = "lqgame", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the Riccati equation, audit regularity and build the saddle
    /// strategy.
    Solve {
        /// Problem file, or a built-in name (example-6.1, example-6.2, example-6.3).
        problem: String,
        #[command(flatten)]
        common: Common,
    },
    /// Check a supplied candidate P for the Riccati equation and regularity.
    Verify {
        problem: String,
        /// Candidate: const:<v>, poly:[c0,..], rational:[..]/[..], inline JSON or a file.
        #[arg(long = "p")]
        p: String,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo probes.
    Simulate {
        problem: String,
        #[arg(value_enum)]
        mode: Mode,
        /// Probed player (1 or 2).
        #[arg(long)]
        player: Option<usize>,
        /// Ramp scales for the divergence probe.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,4")]
        lambdas: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    SaddleTest,
    Stationarity,
    Convexity,
    Divergence,
}

impl From<Mode> for SimulateMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::SaddleTest => SimulateMode::SaddleTest,
            Mode::Stationarity => SimulateMode::Stationarity,
            Mode::Convexity => SimulateMode::Convexity,
            Mode::Divergence => SimulateMode::Divergence,
        }
    }
}

#[derive(Args, Debug)]
struct Common {
    /// Uniform time steps over the horizon.
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    /// Monte Carlo paths.
    #[arg(long, default_value_t = DEFAULT_PATHS)]
    paths: usize,
    /// Master seed for the Brownian batch.
    #[arg(long, env = "LQGAME_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Worker threads (0 = all cores, 1 = sequential).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output directory for report.json and the CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tolerance of the range-inclusion tests.
    #[arg(long, default_value_t = lqgame::matrix::DEFAULT_RANGE_TOL)]
    tol_range: f64,
    /// Tolerance of the definiteness tests.
    #[arg(long, default_value_t = lqgame::matrix::DEFAULT_SIGN_TOL)]
    tol_sign: f64,
    /// Initial state, comma separated; repeat for several states.
    #[arg(long, action = clap::ArgAction::Append)]
    x: Vec<String>,
}

impl Common {
    fn settings(&self) -> anyhow::Result<Settings> {
        let mut xs = Vec::new();
        for raw in &self.x {
            let x = raw
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| anyhow::anyhow!("--x: {e}"))?;
            xs.push(x);
        }
        Ok(Settings {
            steps: self.steps,
            paths: self.paths,
            seed: self.seed,
            threads: self.threads,
            tol_range: self.tol_range,
            tol_sign: self.tol_sign,
            x: xs,
        })
    }
}

fn run(cli: &Cli) -> anyhow::Result<(Run, Option<PathBuf>)> {
    match &cli.command {
        Command::Solve { problem, common } => {
            Ok((cmd_solve(problem, &common.settings()?)?, common.out.clone()))
        }
        Command::Verify { problem, p, common } => {
            Ok((cmd_verify(problem, p, &common.settings()?)?, common.out.clone()))
        }
        Command::Simulate {
            problem,
            mode,
            player,
            lambdas,
            common,
        } => {
            let mut opts = SimulateOptions::new((*mode).into());
            opts.player = *player;
            opts.lambdas = lambdas.clone();
            Ok((cmd_simulate(problem, &opts, &common.settings()?)?, common.out.clone()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::INVALID as u8 } else { 0 });
        }
    };
    let code = match run(&cli) {
        Ok((run, out)) => {
            for v in &run.report.verdicts {
                let tag = if v.passed { "ok  " } else { "FAIL" };
                eprintln!("{tag} {}: {}", v.name, v.detail);
            }
            for s in &run.report.value {
                eprintln!("V(t0, {:?}) = {}", s.x, s.value);
            }
            match out {
                Some(dir) => match run.write(&dir) {
                    Ok(()) => {
                        eprintln!("wrote {} file(s) to {}", run.report.files.len() + 1, dir.display());
                        run.exit_code()
                    }
                    Err(e) => {
                        eprintln!("error: {e:#}");
                        exit::INVALID
                    }
                },
                None => {
                    print!("{}", run.report.to_json());
                    run.exit_code()
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code_of(&e)
        }
    };
    ExitCode::from(code as u8)
}
