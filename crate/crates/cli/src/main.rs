fn main() {
    std::process::exit(sofr_cli::run(std::env::args()));
}
