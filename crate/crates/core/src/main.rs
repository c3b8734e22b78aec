fn main() {
    std::process::exit(mrsr::cli::main_with_args(std::env::args_os()));
}
