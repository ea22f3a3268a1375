fn main() {
    std::process::exit(evquant_cli::cli_main(std::env::args_os()));
}
