use std::process::ExitCode;

fn main() -> ExitCode {
    if let Err(e) = xcoder::cli::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(xcoder::cli::exit_code(&e) as u8);
    }
    ExitCode::from(xcoder::cli::run(std::env::args_os()) as u8)
}
