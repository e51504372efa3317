fn main() {
    std::process::exit(dtgv_cli::run(std::env::args_os()));
}
