fn main() {
    std::process::exit(wavetex_cli::run(std::env::args_os()));
}
