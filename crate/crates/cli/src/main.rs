fn main() {
    std::process::exit(glmm_mispredict_cli::run(std::env::args_os()));
}
