fn main() {
    std::process::exit(timesplit::cli::main_entry(std::env::args()));
}
