fn main() {
    std::process::exit(imba_lens::cli::run(std::env::args_os()));
}
