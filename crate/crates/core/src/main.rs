use clap::Parser;

fn main() {
    let cli = rrtn::cli::Cli::parse();
    let code = rrtn::cli::run(cli, &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
