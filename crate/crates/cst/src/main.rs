fn main() {
    std::process::exit(cst::cli::run(std::env::args_os()));
}
