use clap::Parser;

fn main() -> std::process::ExitCode {
    asl_cli::run(asl_cli::Cli::parse())
}
