fn main() {
    std::process::exit(mmtlab::cli::dispatch(std::env::args_os()));
}
