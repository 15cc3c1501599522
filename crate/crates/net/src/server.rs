//! Binding, serving and stopping an axum router.

use std::io;
use std::net::SocketAddr;

use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

#[derive(Debug, thiserror::Error)]
pub enum BindError {
    #[error("port in use: {0}")]
    PortInUse(SocketAddr),
    #[error("cannot listen on {0}: {1}")]
    Io(SocketAddr, io::Error),
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, BindError> {
    TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => BindError::PortInUse(addr),
        _ => BindError::Io(addr, e),
    })
}

/// A running server. Dropping it without [`Server::stop`] leaves it running until the
/// runtime shuts down.
#[derive(Debug)]
pub struct Server {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<io::Result<()>>,
}

impl Server {
    pub fn spawn(listener: TcpListener, router: Router) -> Server {
        let addr = listener.local_addr().expect("bound listener has an address");
        let (stop, stopped) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            axum::serve(listener, router)
                .with_graceful_shutdown(async {
                    let _ = stopped.await;
                })
                .await
        });
        Server {
            addr,
            stop: Some(stop),
            task,
        }
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and waits for in-flight requests. Open streaming responses are
    /// cut by aborting the task.
    pub async fn stop(mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        match tokio::time::timeout(std::time::Duration::from_secs(2), &mut self.task).await {
            Ok(_) => {}
            Err(_) => self.task.abort(),
        }
    }
}
