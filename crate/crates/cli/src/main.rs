use clap::Parser;
use ecotrans_cli::{error_kind, exit_code, run, Cli};
use serde_json::json;

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let code = exit_code(&err);
        let payload = json!({
            "error": {
                "kind": error_kind(&err),
                "message": err.to_string(),
                "exit_code": code,
            }
        });
        eprintln!("{payload}");
        std::process::exit(code);
    }
}
