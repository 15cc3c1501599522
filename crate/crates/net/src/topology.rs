//! The full deployment in one process: production server, shadower in front of it,
//! control API beside it, all over loopback HTTP.

use std::io::Write;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use shadowfix_core::app::App;
use shadowfix_core::harness::{Harness, HarnessConfig};
use shadowfix_core::profile::profile;

use crate::app_server::{self, Received};
use crate::config::{BadConfig, Config};
use crate::control;
use crate::server::{bind, BindError, Server};
use crate::shadower::{Shadower, ShadowerConfig};

#[derive(Debug, thiserror::Error)]
pub enum BootError {
    #[error(transparent)]
    BadConfig(#[from] BadConfig),
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error("cannot open event log: {0}")]
    EventLog(std::io::Error),
}

pub struct Topology {
    pub harness: Arc<Harness>,
    pub shadower: Shadower,
    /// What production received.
    pub production_log: Arc<Mutex<Vec<Received>>>,
    app: Server,
    proxy: Server,
    control: Server,
    log_writer: Option<(Arc<AtomicBool>, std::thread::JoinHandle<()>)>,
}

impl Topology {
    /// Binds all three ports before serving anything, so a taken port fails the boot
    /// without leaving half a topology running.
    pub async fn boot(config: &Config) -> Result<Topology, BootError> {
        let prof = profile(&config.app).map_err(|e| BadConfig {
            line: 0,
            message: e.to_string(),
        })?;
        let prof = match config.scenario {
            Some(s) => s.profile_with_scenario(&prof),
            None => prof,
        };
        let upstream = bind(config.upstream).await?;
        let listen = bind(config.listen).await?;
        let control_listener = bind(config.control).await?;

        let store = prof.store();
        store.set_op_latency(config.store_op_latency);
        let app = Arc::new(App::new(prof.program(), Arc::new(store), Default::default()));
        let harness = Arc::new(Harness::new(
            app.clone(),
            HarnessConfig {
                oracle: config.oracle,
                search_delay: config.search_delay,
                ..HarnessConfig::default()
            },
        ));
        let log_writer = match &config.event_log {
            Some(path) => {
                let file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(BootError::EventLog)?;
                Some(spawn_log_writer(harness.clone(), file))
            }
            None => None,
        };

        let (app_router, production_log) = app_server::router(app, &config.session_header, "prod");
        let app_server = Server::spawn(upstream, app_router);
        let shadower = Shadower::start(
            ShadowerConfig {
                upstream: app_server.addr(),
                session_header: config.session_header.clone(),
                patch_queue: config.patch_queue,
                regression_queue: config.regression_queue,
                mirror_queue: config.mirror_queue,
                mirrors: config.mirrors.clone(),
            },
            harness.clone(),
        );
        let proxy = Server::spawn(listen, shadower.router());
        let control = Server::spawn(
            control_listener,
            control::router(harness.clone(), Some(shadower.clone())),
        );
        Ok(Topology {
            harness,
            shadower,
            production_log,
            app: app_server,
            proxy,
            control,
            log_writer,
        })
    }

    pub fn proxy_addr(&self) -> SocketAddr {
        self.proxy.addr()
    }

    pub fn upstream_addr(&self) -> SocketAddr {
        self.app.addr()
    }

    pub fn control_addr(&self) -> SocketAddr {
        self.control.addr()
    }

    /// Stops the client port first, drains the shadow queues, then stops the rest.
    pub async fn shutdown(self) {
        self.proxy.stop().await;
        self.shadower.settle().await;
        self.shadower.shutdown().await;
        self.control.stop().await;
        self.app.stop().await;
        if let Some((stop, t)) = self.log_writer {
            stop.store(true, Ordering::Release);
            let _ = tokio::task::spawn_blocking(move || t.join()).await;
        }
    }
}

/// Tails the event log into `file`, one JSON line per record, until told to stop;
/// everything appended before the stop is written.
fn spawn_log_writer(
    harness: Arc<Harness>,
    mut file: std::fs::File,
) -> (Arc<AtomicBool>, std::thread::JoinHandle<()>) {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let t = std::thread::spawn(move || {
        let mut cursor = 0;
        loop {
            let done = flag.load(Ordering::Acquire);
            let records = harness.events().wait_since(cursor, Duration::from_millis(50));
            for r in &records {
                let line = serde_json::to_string(r).expect("records serialize");
                if writeln!(file, "{line}").is_err() {
                    return;
                }
                cursor = r.cursor + 1;
            }
            if done && records.is_empty() {
                let _ = file.flush();
                return;
            }
        }
    });
    (stop, t)
}
