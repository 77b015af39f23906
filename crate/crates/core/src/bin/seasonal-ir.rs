fn main() {
    std::process::exit(seasonal_ir::cli::main_with_args(std::env::args_os()));
}
