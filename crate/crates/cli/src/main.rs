fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(smforge_cli::run(&args));
}
