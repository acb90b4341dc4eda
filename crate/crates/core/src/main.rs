fn main() {
    std::process::exit(modelfree::cli::main_with_args(std::env::args_os()));
}
