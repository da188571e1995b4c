use clap::Parser;

fn main() {
    let cli = mfac::cli::Cli::parse();
    std::process::exit(mfac::cli::run(cli));
}
