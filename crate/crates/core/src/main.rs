fn main() {
    std::process::exit(mmlab::cli::main_with_args(std::env::args_os()));
}
