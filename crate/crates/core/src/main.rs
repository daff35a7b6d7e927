fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(manet_elect::cli::parse_and_dispatch(&argv));
}
