use clap::Parser;

fn main() {
    let cli = ici_cli::Cli::parse();
    if let Err(e) = ici_cli::dispatch(cli) {
        eprintln!("ici: {e}");
        std::process::exit(e.exit_code());
    }
}
