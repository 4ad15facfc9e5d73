use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = hrb_cli::Cli::parse();
    if let Err(err) = hrb_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(hrb_cli::exit_code(&err));
    }
}
