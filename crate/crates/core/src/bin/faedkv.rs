fn main() {
    std::process::exit(faedkv::harness::cli::main_with_args(std::env::args_os()));
}
