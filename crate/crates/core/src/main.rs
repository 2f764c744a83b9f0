fn main() {
    std::process::exit(dpmem::cli::main_with_args(std::env::args_os()));
}
