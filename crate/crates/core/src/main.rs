fn main() {
    std::process::exit(convmotion::cli::run(std::env::args_os()));
}
