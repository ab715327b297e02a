use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let code = nlos_track::cli::main_with(&args, &mut std::io::stdout(), &mut std::io::stderr());
    ExitCode::from(code)
}
