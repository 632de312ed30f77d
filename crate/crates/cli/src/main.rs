fn main() {
    std::process::exit(das_cli::dispatch(std::env::args_os()));
}
