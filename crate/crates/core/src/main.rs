fn main() {
    std::process::exit(teleplan::cli::run(std::env::args_os()));
}
