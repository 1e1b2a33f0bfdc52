fn main() {
    std::process::exit(iidm::pipeline::cli::run(std::env::args_os()));
}
