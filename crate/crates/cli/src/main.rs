fn main() {
    std::process::exit(idla_cli::run());
}
