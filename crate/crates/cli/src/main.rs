fn main() {
    std::process::exit(hazard_cli::run(std::env::args_os()));
}
