use clap::Parser;

fn main() -> std::process::ExitCode {
    let cli = genrenet_cli::Cli::parse();
    match genrenet_cli::run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            std::process::ExitCode::FAILURE
        }
    }
}
