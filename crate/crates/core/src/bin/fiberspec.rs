fn main() {
    std::process::exit(fiberspec::cli::run(std::env::args_os()));
}
