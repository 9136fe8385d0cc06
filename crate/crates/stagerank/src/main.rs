fn main() {
    std::process::exit(stagerank::cli::main());
}
