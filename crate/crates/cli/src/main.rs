fn main() {
    std::process::exit(rfemu_cli::run_cli());
}
