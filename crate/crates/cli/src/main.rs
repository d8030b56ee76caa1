fn main() {
    std::process::exit(phasefd_cli::run(std::env::args_os()));
}
