fn main() {
    std::process::exit(dictboost::cli::run_cli(std::env::args_os()));
}
