fn main() {
    let code = volterra_lq::cli::run(std::env::args_os());
    std::process::exit(code);
}
