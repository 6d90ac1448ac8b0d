fn main() {
    std::process::exit(apex_cli::run_cli(std::env::args_os()));
}
