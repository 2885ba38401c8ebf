fn main() {
    std::process::exit(troop_net::cli::run(std::env::args_os()));
}
