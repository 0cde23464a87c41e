use clap::Parser;

fn main() {
    let cli = popharvest::cli::Cli::parse();
    std::process::exit(popharvest::cli::run(cli));
}
