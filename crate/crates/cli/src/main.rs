use clap::Parser;

fn main() {
    let cli = biaslens::Cli::parse();
    match biaslens::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(biaslens::EXIT_ERROR);
        }
    }
}
