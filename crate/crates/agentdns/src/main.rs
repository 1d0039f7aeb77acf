use std::io::Write;

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("AGENTDNS_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    let code = agentdns::cli::run(std::env::args_os(), &mut out, &mut err).await;
    let _ = out.flush();
    std::process::exit(code);
}
