fn main() {
    std::process::exit(cfisac_harness::cli::main_with_args(std::env::args_os()));
}
