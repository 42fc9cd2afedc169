fn main() {
    std::process::exit(sparse_candidate::cli::run(std::env::args_os()));
}
