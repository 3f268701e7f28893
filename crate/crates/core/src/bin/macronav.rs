fn main() {
    std::process::exit(macronav::cli::dispatch(std::env::args_os()));
}
