fn main() {
    let env_seed = std::env::var(aspre_core::cli::SEED_ENV).ok();
    std::process::exit(aspre_core::cli::run(std::env::args_os(), env_seed.as_deref()));
}
