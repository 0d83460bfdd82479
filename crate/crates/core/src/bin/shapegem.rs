fn main() {
    std::process::exit(shapegem::cli::run(std::env::args_os()));
}
