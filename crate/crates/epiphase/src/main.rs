fn main() {
    std::process::exit(epiphase::cli::main_with_args(std::env::args_os()));
}
