fn main() {
    std::process::exit(ppde::cli::run(std::env::args_os()));
}
