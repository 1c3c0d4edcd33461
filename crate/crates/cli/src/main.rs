fn main() {
    actnet_cli::run();
}
