fn main() {
    std::process::exit(chair_cli::run(std::env::args()));
}
