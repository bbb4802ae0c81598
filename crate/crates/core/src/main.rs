fn main() {
    std::process::exit(neural_gpu::cli::run(std::env::args_os()));
}
