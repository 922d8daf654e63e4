fn main() {
    let code = magloc::cli::main_entry(std::env::args().collect());
    std::process::exit(code);
}
