fn main() {
    std::process::exit(pathprompt::harness::cli(std::env::args()));
}
