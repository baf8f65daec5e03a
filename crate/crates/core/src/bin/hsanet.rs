fn main() {
    std::process::exit(hsanet::cli::main(std::env::args().collect()));
}
