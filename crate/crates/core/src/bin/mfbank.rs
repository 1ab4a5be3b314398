fn main() {
    std::process::exit(mfbank::cli::main_with_args(std::env::args_os()));
}
