fn main() {
    std::process::exit(nftkit::cli::main_with_args(std::env::args_os()));
}
