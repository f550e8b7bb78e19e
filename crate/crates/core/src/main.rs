fn main() {
    std::process::exit(nsmp_core::cli::run(std::env::args_os()));
}
