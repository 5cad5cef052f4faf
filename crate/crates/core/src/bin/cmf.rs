fn main() {
    std::process::exit(conmatformer::cli::run(std::env::args_os()));
}
