fn main() {
    std::process::exit(ada_core::cli::run(std::env::args_os()));
}
