use std::process::ExitCode;

fn main() -> ExitCode {
    glap_harness::cli::main_with_args(std::env::args_os())
}
