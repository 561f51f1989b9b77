fn main() {
    std::process::exit(interstamp::run());
}
