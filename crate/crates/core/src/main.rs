fn main() {
    std::process::exit(moses_lab::cli::run_command(std::env::args_os()));
}
