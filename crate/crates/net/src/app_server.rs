//! The production application behind plain HTTP. Every route goes to the handler
//! program; the server adds nothing but the envelope conversion.

use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::{Request, State};
use axum::response::Response;
use axum::Router;
use http_body_util::BodyExt;
use hyper::StatusCode;
use serde::{Deserialize, Serialize};
use shadowfix_core::app::App;

use crate::http::{request_envelope, to_http_response, RequestIds};

/// What the server saw of one request, for checking what a shadow target received.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Received {
    pub request_id: String,
    pub method: String,
    pub path: String,
    pub session: Option<String>,
    pub body: Vec<u8>,
    pub status: u16,
    /// Session token the response carried.
    pub issued: Option<String>,
}

#[derive(Clone)]
struct AppState {
    app: Arc<App>,
    session_header: String,
    ids: Arc<RequestIds>,
    log: Arc<Mutex<Vec<Received>>>,
}

/// The router, plus the shared log of every request it answered.
pub fn router(app: Arc<App>, session_header: &str, id_prefix: &str) -> (Router, Arc<Mutex<Vec<Received>>>) {
    let log = Arc::new(Mutex::new(Vec::new()));
    let state = AppState {
        app,
        session_header: session_header.to_string(),
        ids: Arc::new(RequestIds::new(id_prefix)),
        log: log.clone(),
    };
    (Router::new().fallback(handle).with_state(state), log)
}

async fn handle(State(s): State<AppState>, req: Request) -> Response {
    let (parts, body) = req.into_parts();
    let body = match body.collect().await {
        Ok(b) => b.to_bytes(),
        Err(_) => {
            let mut r = Response::new(Body::from("unreadable body\n"));
            *r.status_mut() = StatusCode::BAD_REQUEST;
            return r;
        }
    };
    let path = parts.uri.path_and_query().map_or("/", |p| p.as_str());
    let env = request_envelope(&parts.method, path, &parts.headers, body, &s.session_header, &s.ids);
    let app = s.app.clone();
    let (env, resp) = tokio::task::spawn_blocking(move || {
        let resp = app.handle(&env);
        (env, resp)
    })
    .await
    .expect("handler execution does not panic");
    s.log.lock().expect("log lock").push(Received {
        request_id: env.request_id,
        method: env.method,
        path: env.path,
        session: env.session_id,
        body: env.body,
        status: resp.status,
        issued: resp.header(&s.session_header).map(str::to_string),
    });
    to_http_response(&resp)
}
