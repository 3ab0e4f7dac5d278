fn main() {
    std::process::exit(oodscore::cli::main());
}
