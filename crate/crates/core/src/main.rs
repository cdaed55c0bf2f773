fn main() {
    std::process::exit(ocsdf::cli::run(std::env::args_os()));
}
