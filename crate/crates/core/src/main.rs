fn main() {
    std::process::exit(beamgrid::cli::run(std::env::args_os()));
}
