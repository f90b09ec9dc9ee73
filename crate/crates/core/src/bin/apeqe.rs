fn main() {
    std::process::exit(apeqe::cli::run(std::env::args_os()));
}
