fn main() {
    std::process::exit(aegan_cli::run(std::env::args_os().collect()));
}
