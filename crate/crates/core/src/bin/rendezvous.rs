fn main() {
    std::process::exit(rendezvous::cli::dispatch(std::env::args_os()));
}
