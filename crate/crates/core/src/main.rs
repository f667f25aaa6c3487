fn main() {
    std::process::exit(inett::cli::run(std::env::args_os()));
}
