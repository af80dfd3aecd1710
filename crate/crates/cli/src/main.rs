fn main() {
    std::process::exit(tmvi_cli::cli::parse_and_dispatch(std::env::args_os()));
}
