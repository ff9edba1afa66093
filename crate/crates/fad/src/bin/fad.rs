fn main() {
    std::process::exit(fad::cli::run(std::env::args_os()));
}
