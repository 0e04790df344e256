fn main() { std::process::exit(lusb_cli::run(std::env::args().collect())); }
