use classical_limit::cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or(cli::LOG_ENV, "info"))
        .init();
    std::process::exit(cli::run(std::env::args_os()));
}
