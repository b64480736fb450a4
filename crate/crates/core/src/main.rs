fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = powergp::cli::main_with_args(std::env::args_os()) {
        eprintln!("{}", e.to_json());
        std::process::exit(1);
    }
}
