fn main() {
    std::process::exit(weighted_fem::cli::run(std::env::args_os()));
}
