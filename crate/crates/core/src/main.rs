fn main() {
    std::process::exit(gkae_covert::cli::main_with_args(std::env::args_os()));
}
