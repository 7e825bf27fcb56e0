use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(marpo::cli::run(std::env::args_os()))
}
