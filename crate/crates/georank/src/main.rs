fn main() {
    std::process::exit(georank::cli::run(std::env::args().collect()));
}
