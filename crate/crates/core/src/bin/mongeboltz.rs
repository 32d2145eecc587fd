fn main() {
    std::process::exit(mongeboltz::cli::run(std::env::args_os()));
}
