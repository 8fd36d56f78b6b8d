use clap::Parser;
use dialog_esp_gateway::cli::{run, Cli};

fn main() -> anyhow::Result<()> {
    run(Cli::parse())
}
