use clap::Parser;

fn main() {
    let cli = flowacc_cli::Cli::parse();
    if let Err(e) = flowacc_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
