fn main() {
    std::process::exit(ulmo::cli::run());
}
