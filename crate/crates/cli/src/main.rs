use clap::Parser;

fn main() {
    let cli = idcsbm_cli::args::Cli::parse();
    if let Err(err) = idcsbm_cli::run(&cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
