fn main() {
    std::process::exit(outfitforge::cli::dispatch(std::env::args_os()));
}
