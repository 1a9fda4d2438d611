fn main() {
    std::process::exit(firtree_cli::run());
}
