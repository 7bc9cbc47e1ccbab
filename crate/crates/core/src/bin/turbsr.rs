fn main() {
    std::process::exit(turbsr::cli::run());
}
