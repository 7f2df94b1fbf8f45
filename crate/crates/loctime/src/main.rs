fn main() {
    std::process::exit(loctime::experiment::cli::main());
}
