fn main() {
    std::process::exit(semls::cli::run_command(std::env::args_os()));
}
