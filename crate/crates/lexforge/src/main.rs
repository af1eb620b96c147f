fn main() {
    std::process::exit(lexforge::cli::main_entry());
}
