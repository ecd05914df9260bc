fn main() {
    std::process::exit(cdma_coop::cli::run_cli(std::env::args_os()));
}
