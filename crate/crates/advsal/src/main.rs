fn main() {
    std::process::exit(advsal::cli::run(std::env::args_os()));
}
