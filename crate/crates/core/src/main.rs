fn main() {
    std::process::exit(kd_prune::harness::cli::main());
}
