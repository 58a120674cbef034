//! The HTTP front end. Every request is funneled through one lock onto the
//! appliance, which is the only mutator of simulated state.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use tokio::net::TcpListener;

use impliance::appliance::Appliance;

use crate::api::{handle, ApiRequest, ApiResponse, Method};

type Shared = Arc<Mutex<Appliance>>;

async fn dispatch(State(app): State<Shared>, method: axum::http::Method, uri: Uri, body: String) -> Response {
    let Some(method) = Method::parse(method.as_str()) else {
        return to_response(ApiResponse::error(
            405,
            "method_not_allowed",
            &format!("method {method} is not supported"),
        ));
    };
    let request =
        ApiRequest { method, path: uri.path().to_string(), query: uri.query().unwrap_or_default().to_string(), body };
    let response = tokio::task::spawn_blocking(move || {
        let mut guard = app.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
        handle(&mut guard, &request)
    })
    .await
    .unwrap_or_else(|e| ApiResponse::error(500, "internal", &e.to_string()));
    to_response(response)
}

fn to_response(r: ApiResponse) -> Response {
    let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, r.content_type)], r.body).into_response()
}

pub fn router(app: Appliance) -> Router {
    Router::new().fallback(dispatch).with_state(Arc::new(Mutex::new(app)))
}

/// Binds `addr` and serves until the process is interrupted. `ready` is
/// called with the bound address once the listener is up.
pub async fn serve(app: Appliance, addr: SocketAddr, ready: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    ready(listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
