fn main() {
    std::process::exit(rrl_core::cli::run(std::env::args_os()));
}
