fn main() {
    std::process::exit(wfenhance::cli::main_with_args(std::env::args_os()));
}
