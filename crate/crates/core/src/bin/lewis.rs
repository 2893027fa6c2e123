fn main() {
    std::process::exit(lewis_core::cli::main_with_args(std::env::args_os()));
}
