use std::process::ExitCode;

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("UNDERREPORT_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| format!("UNDERREPORT_THREADS: '{raw}' is not a positive integer"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| format!("UNDERREPORT_THREADS: {e}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let code = underreport::cli::main_with_args(std::env::args_os());
    ExitCode::from(code as u8)
}
