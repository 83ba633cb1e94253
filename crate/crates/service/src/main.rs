fn main() {
    std::process::exit(femseg_service::cli::main_with(std::env::args_os()));
}
