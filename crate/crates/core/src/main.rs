use clap::Parser;

fn main() {
    let cli = tmixreg::cli::Cli::parse();
    if let Err(e) = tmixreg::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
