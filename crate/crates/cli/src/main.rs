fn main() {
    std::process::exit(qpmc_cli::main_with(std::env::args_os()));
}
