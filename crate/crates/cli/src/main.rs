use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = bbsea_cli::Cli::parse();
    if let Err(e) = bbsea_cli::run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(bbsea_cli::exit_code(&e));
    }
}
