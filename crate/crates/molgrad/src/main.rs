use std::process::ExitCode;

fn main() -> ExitCode {
    molgrad::cli::run()
}
