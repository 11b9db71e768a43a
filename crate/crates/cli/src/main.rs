use clap::Parser;

use ptmaml_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            let record = e.record(cli.command.name());
            eprintln!("{}", serde_json::to_string(&record).expect("error record serializes"));
            std::process::exit(e.exit_code());
        }
    }
}
