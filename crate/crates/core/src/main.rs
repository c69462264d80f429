fn main() {
    std::process::exit(conjlogit::cli::run(std::env::args_os()));
}
