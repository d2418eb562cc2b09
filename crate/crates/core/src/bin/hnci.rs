fn main() {
    std::process::exit(hnci::cli::run(std::env::args_os()));
}
