fn main() {
    std::process::exit(waveletgan::cli::cli_main(std::env::args_os()));
}
