use clap::Parser;
use lfda_cli::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = cli.run() {
        eprintln!("lfda: {e}");
        std::process::exit(e.exit_code());
    }
}
