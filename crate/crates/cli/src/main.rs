use clap::Parser;

fn main() {
    let cli = motiondiff_cli::Cli::parse();
    if let Err(e) = motiondiff_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
