fn main() {
    sste_core::cli::init_logging();
    std::process::exit(sste_core::cli::run(std::env::args_os()));
}
