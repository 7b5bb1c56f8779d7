fn main() {
    std::process::exit(sme_tools::cli::main_with_args(std::env::args_os()));
}
