fn main() {
    std::process::exit(fpscale::cli::run(std::env::args_os()));
}
