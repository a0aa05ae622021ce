fn main() {
    std::process::exit(ncmac::cli::run(std::env::args_os()));
}
