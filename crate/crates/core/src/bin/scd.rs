fn main() {
    std::process::exit(scd::cli::main());
}
