use std::net::SocketAddr;

#[tokio::main]
async fn main() {
    let addr: SocketAddr = std::env::args()
        .skip_while(|a| a != "--addr")
        .nth(1)
        .or_else(|| std::env::var("QUANTGEST_ADDR").ok())
        .unwrap_or_else(|| "127.0.0.1:8080".into())
        .parse()
        .unwrap_or_else(|e| {
            eprintln!("error: bad address: {e}");
            std::process::exit(2)
        });
    let listener = match tokio::net::TcpListener::bind(addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {addr}: {e}");
            std::process::exit(1)
        }
    };
    eprintln!("listening on http://{addr}");
    if let Err(e) = axum::serve(listener, quantgest_service::router()).await {
        eprintln!("error: {e}");
        std::process::exit(1)
    }
}
