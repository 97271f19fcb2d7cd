fn main() {
    std::process::exit(storage_arb_cli::app::run(std::env::args_os()));
}
