fn main() {
    std::process::exit(mobrisk::cli::main());
}
