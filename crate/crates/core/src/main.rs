fn main() {
    env_logger::init();
    std::process::exit(decolor::cli::run(std::env::args_os()));
}
