fn main() {
    std::process::exit(trajrepair::cli::run(std::env::args_os()));
}
