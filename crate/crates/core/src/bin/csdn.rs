fn main() {
    std::process::exit(csdn::cli::run_cli(std::env::args()));
}
