fn main() {
    std::process::exit(sddql::cli::run(std::env::args_os()));
}
