use clap::Parser;

fn main() {
    let flags = rdl_cli::Flags::parse();
    let seed = std::env::var(rdl_cli::SEED_ENV).ok();
    std::process::exit(rdl_cli::main_with(flags, seed.as_deref()));
}
