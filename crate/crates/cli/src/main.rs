fn main() {
    let outcome = sclora_cli::run(std::env::args_os());
    std::process::exit(outcome.exit_code);
}
