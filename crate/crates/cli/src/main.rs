fn main() {
    std::process::exit(pgf_disentangle_cli::main_entry(std::env::args_os()));
}
