fn main() {
    std::process::exit(hsf_core::cli::main_with_args(std::env::args_os()));
}
