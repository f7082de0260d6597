use clap::Parser;

fn main() {
    let cli = dapigrid::cli::Cli::parse();
    if let Err(e) = dapigrid::cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
