fn main() {
    std::process::exit(tri_retrieve::cli::main_with_args(std::env::args_os()));
}
