//! Worker process serving built-in kernels over the stdio wire protocol.

fn main() {
    std::process::exit(fk_core::harness::worker::serve_stdio());
}
