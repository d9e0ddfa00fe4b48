fn main() {
    std::process::exit(spin_echo_cli::run(std::env::args_os()));
}
