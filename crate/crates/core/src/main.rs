fn main() {
    std::process::exit(cooldown_lab::cli::run_command(std::env::args_os()));
}
