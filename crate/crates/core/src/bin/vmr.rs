use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(vmr_core::cli::dispatch(std::env::args()) as u8)
}
