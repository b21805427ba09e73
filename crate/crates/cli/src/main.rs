fn main() {
    std::process::exit(reluhead_cli::run(std::env::args_os()));
}
