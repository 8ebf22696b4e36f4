fn main() { std::process::exit(amodal_core::cli::run(std::env::args_os())); }
