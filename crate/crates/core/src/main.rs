use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(i2l_core::cli::run(std::env::args_os()) as u8)
}
