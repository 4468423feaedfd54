fn main() {
    std::process::exit(impirl::run_from_args(std::env::args_os()));
}
