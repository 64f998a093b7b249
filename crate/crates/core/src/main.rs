fn main() {
    std::process::exit(dgaug::cli::dispatch(std::env::args_os()));
}
