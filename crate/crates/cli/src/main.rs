fn main() {
    std::process::exit(vpb_cli::run_command(std::env::args_os()));
}
