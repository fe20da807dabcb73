fn main() {
    std::process::exit(membrane_lab::run(std::env::args_os()));
}
