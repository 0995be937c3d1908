fn main() {
    std::process::exit(dynamiq::cli::run(std::env::args_os()));
}
