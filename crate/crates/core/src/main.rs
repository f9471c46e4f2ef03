fn main() {
    std::process::exit(covcap::cli::run(std::env::args_os()));
}
