fn main() {
    std::process::exit(vrvq::cli::dispatch(std::env::args_os()));
}
