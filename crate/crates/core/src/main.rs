fn main() {
    std::process::exit(osvol::cli::main_entry(std::env::args_os().collect()));
}
