fn main() {
    std::process::exit(pwmf_cli::run(std::env::args_os()));
}
