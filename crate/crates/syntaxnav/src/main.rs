fn main() {
    std::process::exit(syntaxnav::cli::run());
}
