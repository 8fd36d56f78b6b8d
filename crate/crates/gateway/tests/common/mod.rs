#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;

use dialog_esp::session::{Clock, EventLog, ManualClock, Timestamp};
use dialog_esp_gateway::{http, Params, RunMode, Service};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

pub struct Server {
    pub addr: SocketAddr,
    pub service: Arc<Service>,
    pub client: reqwest::Client,
    stop: Option<oneshot::Sender<()>>,
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
    }
}

pub async fn start(params: &Params, mode: RunMode, clock: Arc<dyn Clock>) -> Server {
    let service = Service::new(params, mode, 7, clock, Arc::new(EventLog::new(None)));
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = oneshot::channel();
    let svc = service.clone();
    tokio::spawn(async move {
        http::serve(svc, listener, async {
            let _ = rx.await;
        })
        .await
        .unwrap();
    });
    Server {
        addr,
        service,
        client: reqwest::Client::new(),
        stop: Some(tx),
    }
}

pub fn manual_clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new(Timestamp::from_millis(1_767_225_600_000)))
}
