fn main() {
    std::process::exit(auxiv::cli::run(std::env::args_os()));
}
