fn main() {
    std::process::exit(modalstab::cli::main_with_args(std::env::args_os()));
}
