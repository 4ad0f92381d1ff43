fn main() {
    std::process::exit(sirvax::cli::run_from_args(std::env::args_os()));
}
