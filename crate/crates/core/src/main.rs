fn main() {
    std::process::exit(pandaid::cli::main());
}
