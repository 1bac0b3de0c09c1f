fn main() {
    std::process::exit(qin_cli::run(std::env::args_os()));
}
