fn main() {
    std::process::exit(dagcomm_harness::cli::main());
}
