fn main() {
    std::process::exit(stegan_core::cli::main());
}
