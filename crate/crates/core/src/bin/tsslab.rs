fn main() {
    std::process::exit(tsslab::cli::main_with_args(std::env::args_os()));
}
