fn main() {
    std::process::exit(cpsu_distill::cli::run(std::env::args_os()));
}
