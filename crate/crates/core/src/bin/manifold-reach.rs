fn main() {
    std::process::exit(manifold_reach::cli::run(std::env::args_os()));
}
