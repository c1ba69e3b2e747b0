fn main() {
    std::process::exit(ncs_core::cli::run(std::env::args_os()));
}
