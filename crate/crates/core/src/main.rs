fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CDAL_LOG", "warn")).init();
    std::process::exit(cdal_arx::cli::run(std::env::args_os()));
}
