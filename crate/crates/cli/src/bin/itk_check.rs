//! `itk_check ...` is `voxkit check ...`.

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    std::process::exit(voxkit_cli::run_alias("check"));
}
