fn main() {
    std::process::exit(qsep::cli::run(std::env::args_os()));
}
