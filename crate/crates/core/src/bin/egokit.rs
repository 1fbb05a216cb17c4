fn main() {
    std::process::exit(egokit::cli::run(std::env::args_os()));
}
