fn main() {
    std::process::exit(coded_qr::cli::run());
}
