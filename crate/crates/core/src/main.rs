fn main() {
    std::process::exit(pairscale::cli::run(std::env::args_os()));
}
