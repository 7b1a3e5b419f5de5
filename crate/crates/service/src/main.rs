fn main() {
    std::process::exit(fieldwork_service::cli::main());
}
