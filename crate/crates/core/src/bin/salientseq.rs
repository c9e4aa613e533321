fn main() {
    std::process::exit(salientseq::cli::run_from_args(std::env::args_os()));
}
