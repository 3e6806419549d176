use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(orthoris_core::experiments::cli_main(std::env::args()).clamp(0, 255) as u8)
}
