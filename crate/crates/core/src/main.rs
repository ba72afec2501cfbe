fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CROSSVIEW_LOG", "info"))
        .init();
    std::process::exit(crossview::cli::run(std::env::args_os()));
}
