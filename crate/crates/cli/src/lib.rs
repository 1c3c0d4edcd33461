pub fn run() {
    todo!("cli wiring lands after the core library");
}
