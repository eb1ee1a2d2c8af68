fn main() {
    std::process::exit(detoxkit::cli::run(std::env::args_os()));
}
