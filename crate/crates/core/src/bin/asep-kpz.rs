fn main() {
    std::process::exit(asep_kpz::cli::run(std::env::args_os()));
}
