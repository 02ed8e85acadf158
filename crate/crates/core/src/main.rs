fn main() {
    std::process::exit(blurtrack::cli::run());
}
