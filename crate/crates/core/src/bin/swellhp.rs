use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use swellhp::cli::{parse_config, run_plan, tokenize, Origin};

#[derive(Parser)]
#[command(name = "swellhp", version, about = "Spectral/hp ALE solver for planar extrudate swell")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a plan described by a `key = value` config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        re: Option<String>,
        #[arg(long)]
        p: Option<String>,
        #[arg(long)]
        bsl: Option<String>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        out: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let Command::Run { config, re, p, bsl, mode, out } = Cli::parse().command;
    let result = (|| {
        let text = std::fs::read_to_string(&config)?;
        let file = tokenize(&text, &config.display().to_string())?;
        let flags: Vec<(String, String, Origin)> = [("re", "--re", re), ("p", "--p", p), ("b_sl", "--bsl", bsl), ("mode", "--mode", mode), ("out", "--out", out)]
            .into_iter()
            .filter_map(|(k, flag, v)| v.map(|v| (k.to_string(), v, Origin(flag.to_string()))))
            .collect();
        let plan = parse_config(&file, &flags)?;
        run_plan(&plan)
    })();
    match result {
        Ok(rows) => {
            log::info!("{} run(s) written", rows.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
