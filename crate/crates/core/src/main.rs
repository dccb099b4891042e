fn main() {
    std::process::exit(fowlstream::cli::run(std::env::args_os()));
}
