fn main() {
    std::process::exit(coil2coil::cli::cli_main(std::env::args_os()));
}
