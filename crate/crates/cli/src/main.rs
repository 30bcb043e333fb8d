fn main() {
    std::process::exit(scatclr_cli::run(std::env::args_os()));
}
