use clap::Parser;

fn main() {
    let cli = sgmt_cli::Cli::parse();
    if let Err(err) = sgmt_cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
