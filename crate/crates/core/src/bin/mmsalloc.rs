fn main() {
    std::process::exit(mms_core::cli::main_with(std::env::args_os()));
}
