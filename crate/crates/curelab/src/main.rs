use clap::Parser;

fn main() {
    let cli = curelab::cli::Cli::parse();
    if let Err(err) = curelab::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
