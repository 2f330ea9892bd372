fn main() {
    std::process::exit(far_cli::run(std::env::args_os()));
}
