fn main() {
    std::process::exit(abp::harness::cli::main_entry());
}
