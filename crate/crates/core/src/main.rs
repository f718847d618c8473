fn main() {
    std::process::exit(etherm::cli::main_with_args(std::env::args_os()));
}
