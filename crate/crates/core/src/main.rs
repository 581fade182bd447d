use clap::Parser;

use uclf_adapt::cli::{execute, Cli};

fn main() {
    std::process::exit(execute(Cli::parse()));
}
