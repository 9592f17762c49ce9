use anosovlab::cli::{execute, Cli};
use clap::Parser;

fn main() {
    // optional worker-count override; numeric outputs are independent of it
    if let Ok(n) = std::env::var("ANOSOVLAB_WORKERS") {
        if let Ok(n) = n.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(manifest) => println!("wrote {}", manifest.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
