fn main() {
    std::process::exit(ncurve_core::cli::run(std::env::args_os()));
}
