fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = matforge::cli::run(std::env::args_os(), std::env::vars().collect());
    std::process::exit(code);
}
