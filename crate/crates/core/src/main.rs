use clap::Parser;

fn main() {
    let cli = bondlight::cli::Cli::parse();
    match bondlight::cli::run(cli) {
        Ok(()) => {}
        Err(err) => {
            let code = bondlight::cli::report_error(&err);
            std::process::exit(code);
        }
    }
}
