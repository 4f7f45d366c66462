use clap::Parser;
use leishcount_cli::{run, Cli};

fn main() {
    let status = run(Cli::parse());
    std::process::exit(status as i32);
}
