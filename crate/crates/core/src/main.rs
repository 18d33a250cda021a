fn main() {
    std::process::exit(tagm::cli::run());
}
