fn main() {
    std::process::exit(pacing_cli::dispatch(std::env::args_os()));
}
