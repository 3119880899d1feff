fn main() {
    std::process::exit(duncan::cli::main_with_args(std::env::args_os()));
}
