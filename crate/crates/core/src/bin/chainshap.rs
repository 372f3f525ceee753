use std::process::ExitCode;

fn main() -> ExitCode {
    chainshap::cli::main_with_args(std::env::args_os())
}
