fn main() {
    std::process::exit(mecsim::cli::cli_main(std::env::args_os()));
}
