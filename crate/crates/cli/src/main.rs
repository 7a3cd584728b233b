use clap::Parser;

fn main() {
    std::process::exit(heisenreg_cli::run(heisenreg_cli::Cli::parse()));
}
