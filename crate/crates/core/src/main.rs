fn main() {
    std::process::exit(gedkit::cli::run(std::env::args_os()));
}
