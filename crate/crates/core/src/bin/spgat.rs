fn main() {
    std::process::exit(spgat::cli::main_with_args(std::env::args_os()));
}
