fn main() {
    std::process::exit(qepi::cli::dispatch(std::env::args_os()));
}
