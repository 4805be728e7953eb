fn main() {
    std::process::exit(eigencent::cli::run(std::env::args_os()));
}
