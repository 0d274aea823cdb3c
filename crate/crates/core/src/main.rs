fn main() {
    std::process::exit(rohan::cli::dispatch(std::env::args_os()));
}
