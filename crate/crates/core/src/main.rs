fn main() {
    std::process::exit(pscatter::cli::run(std::env::args_os()));
}
