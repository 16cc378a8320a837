fn main() {
    std::process::exit(routechoice::cli::main_with_args(std::env::args_os()));
}
