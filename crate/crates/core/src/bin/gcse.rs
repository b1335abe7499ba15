use clap::Parser;

use gcse::cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => print!("{summary}{}", if summary.ends_with('\n') { "" } else { "\n" }),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
