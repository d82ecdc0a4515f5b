fn main() {
    std::process::exit(brc_lake::cli::main_with_process_env());
}
