fn main() {
    std::process::exit(rti::cli::main_with(std::env::args_os()));
}
