use clap::Parser;

use fish_cli::cli::{Cli, Cmd};
use fish_cli::commands;
use fish_cli::files::FileConfig;
use fish_cli::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    let cfgfile = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(7);
    match &cli.cmd {
        Cmd::GenData {
            out,
            n_train,
            n_eval,
        } => commands::gen_data(&cfgfile, seed, out, *n_train, *n_eval),
        Cmd::Train { data, out, metrics } => {
            commands::train_cmd(&cfgfile, cli.seed, data, out, metrics.as_ref())
        }
        Cmd::Replay {
            input,
            jsonl,
            summary,
            report_after_s,
            no_auto_reset,
        } => commands::replay_cmd(
            cli.ckpt.as_ref(),
            input,
            jsonl.as_ref(),
            summary.as_ref(),
            *report_after_s,
            !no_auto_reset,
        ),
        Cmd::Stream { no_auto_reset } => commands::stream_cmd(cli.ckpt.as_ref(), !no_auto_reset),
        Cmd::Bench { steps } => commands::bench_cmd(cli.ckpt.as_ref(), *steps, seed),
        Cmd::Eval { data, out, curves } => {
            commands::eval_cmd(cli.ckpt.as_ref(), data, out.as_ref(), curves.as_ref())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
