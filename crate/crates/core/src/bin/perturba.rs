fn main() {
    std::process::exit(perturba::cli::main_with(std::env::args_os()));
}
