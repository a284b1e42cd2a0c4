use clap::Parser;

fn main() {
    let cli = treevo_cli::Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = treevo_cli::run(cli) {
        eprintln!("treevo: {e}");
        std::process::exit(e.code());
    }
}
