fn main() {
    std::process::exit(cascade_g2::cli::main());
}
