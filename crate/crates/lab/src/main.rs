fn main() {
    std::process::exit(cmdp_lab::cli::main_with(std::env::args_os()));
}
