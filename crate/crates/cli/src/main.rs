fn main() {
    std::process::exit(sumgan_cli::main_with_args(std::env::args_os()));
}
