use clap::Parser;

use premem_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut stdout = std::io::stdout();
    if let Err(e) = run(&cli, &mut stdout) {
        eprintln!("premem: {e}");
        std::process::exit(e.exit_code());
    }
}
