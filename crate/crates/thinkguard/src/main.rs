fn main() {
    std::process::exit(thinkguard::cli::run(std::env::args_os()));
}
