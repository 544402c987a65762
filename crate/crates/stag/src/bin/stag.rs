fn main() {
    std::process::exit(stag::cli::run());
}
