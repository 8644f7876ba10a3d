fn main() {
    std::process::exit(fair_screen::cli::run(std::env::args_os()));
}
