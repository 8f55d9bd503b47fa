fn main() {
    std::process::exit(agn::cli::run(std::env::args_os()));
}
