use clap::Parser;

fn main() {
    let cli = xtom_cli::Cli::parse();
    if let Err(e) = xtom_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
