fn main() {
    std::process::exit(lassornet::cli::run(std::env::args_os()));
}
