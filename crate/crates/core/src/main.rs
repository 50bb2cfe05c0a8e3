use std::process::ExitCode;

fn main() -> ExitCode {
    sceneforge::cli::run(std::env::args_os())
}
