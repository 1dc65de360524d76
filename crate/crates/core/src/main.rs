fn main() {
    std::process::exit(admnmt::cli::run(std::env::args_os()));
}
