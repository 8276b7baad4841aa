fn main() {
    if let Err(e) = eqlatent_cli::run(std::env::args_os()) {
        eprintln!("error: {e:#}");
        std::process::exit(e.exit_code());
    }
}
