use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    ExitCode::from(rleif::harness::cli_main(&args))
}
