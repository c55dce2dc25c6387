fn main() {
    std::process::exit(demand_ident::cli::run(std::env::args_os()));
}
