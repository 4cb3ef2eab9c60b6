fn main() {
    std::process::exit(mintime::cli::run(std::env::args_os()));
}
