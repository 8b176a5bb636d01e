fn main() {
    std::process::exit(csdi_bench::run(std::env::args_os()));
}
