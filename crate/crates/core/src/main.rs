use clap::Parser;

use behest::cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    let result = run(&cli);
    match &result {
        Ok(out) if out.unconverged > 0 => {
            eprintln!(
                "warning: {} fit(s) did not reach the gradient tolerance",
                out.unconverged
            );
        }
        Ok(_) => {}
        Err(e) => eprintln!("error ({}): {e}", cli.command.name()),
    }
    std::process::exit(exit_code(&result));
}
