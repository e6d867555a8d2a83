fn main() {
    let (stdout, stderr) = (std::io::stdout(), std::io::stderr());
    let code = pondsl::cli::main_with(
        std::env::args(),
        std::env::var("PONDSL_SEED").ok(),
        &mut stdout.lock(),
        &mut stderr.lock(),
    );
    std::process::exit(code);
}
