fn main() {
    std::process::exit(pinsprune::cli::run(std::env::args_os()));
}
