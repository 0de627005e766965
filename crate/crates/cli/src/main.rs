fn main() {
    std::process::exit(lipcert::run_cli(std::env::args_os()));
}
