fn main() {
    std::process::exit(boundary_infer::cli::main_with_args(std::env::args_os()));
}
