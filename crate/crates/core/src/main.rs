fn main() {
    std::process::exit(parapost::cli::run(std::env::args_os()));
}
