fn main() {
    std::process::exit(vrlog::cli::main());
}
