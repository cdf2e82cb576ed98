fn main() {
    std::process::exit(rdl_core::cli::main_with_args(std::env::args_os()));
}
