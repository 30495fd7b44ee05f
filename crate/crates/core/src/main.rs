fn main() {
    std::process::exit(gfa::cli::run(std::env::args_os()));
}
