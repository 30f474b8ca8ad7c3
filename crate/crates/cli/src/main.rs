fn main() {
    std::process::exit(dplens_cli::run(std::env::args_os()));
}
