fn main() {
    std::process::exit(pless::cli::run(std::env::args_os()));
}
