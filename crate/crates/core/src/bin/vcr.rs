fn main() {
    std::process::exit(vcr::cli::run_cli(std::env::args_os()));
}
