use clap::Parser;
use future_distill::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level()).init();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
