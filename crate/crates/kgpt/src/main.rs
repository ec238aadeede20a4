fn main() {
    let args: Vec<String> = std::env::args().collect();
    if let Err(e) = kgpt::cli::run(&args) {
        eprintln!("error[{}]: {e}", e.name());
        std::process::exit(e.exit_code());
    }
}
