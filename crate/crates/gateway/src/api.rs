//! Request routing: every endpoint is a translation between JSON bodies and
//! one appliance call. The HTTP server and the tests both go through
//! [`handle`].

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use impliance::appliance::{Appliance, ApplianceError};
use impliance::model::{DocId, Path, SourceFormat, TypedValue, VersionId};
use impliance::query::{AggregateRequest, ConnectionRequest, DrillState, SearchRequest, ViewQuery};
use impliance::ring::NodeId;
use impliance::views::ViewDef;
use impliance::workload::Barrier;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
    Put,
    Delete,
}

impl Method {
    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "GET" => Some(Method::Get),
            "POST" => Some(Method::Post),
            "PUT" => Some(Method::Put),
            "DELETE" => Some(Method::Delete),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ApiRequest {
    pub method: Method,
    pub path: String,
    /// Raw query string without the leading `?`.
    pub query: String,
    pub body: String,
}

impl ApiRequest {
    pub fn new(method: Method, target: &str, body: impl Into<String>) -> ApiRequest {
        let (path, query) = target.split_once('?').unwrap_or((target, ""));
        ApiRequest { method, path: path.to_string(), query: query.to_string(), body: body.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApiResponse {
    pub status: u16,
    pub content_type: &'static str,
    pub body: String,
}

impl ApiResponse {
    fn json(status: u16, value: &impl Serialize) -> ApiResponse {
        let mut body = serde_json::to_string_pretty(value).expect("response serializes");
        body.push('\n');
        ApiResponse { status, content_type: "application/json", body }
    }

    fn text(body: String) -> ApiResponse {
        ApiResponse { status: 200, content_type: "text/tab-separated-values", body }
    }

    pub fn error(status: u16, code: &str, message: &str) -> ApiResponse {
        ApiResponse::json(status, &json!({ "error": { "code": code, "message": message } }))
    }

    /// The error code of a failed response.
    pub fn error_code(&self) -> Option<String> {
        let v: Value = serde_json::from_str(&self.body).ok()?;
        v.get("error")?.get("code")?.as_str().map(str::to_string)
    }
}

/// HTTP status for an appliance error code.
pub fn status_for(code: &str) -> u16 {
    match code {
        "unknown_doc" | "unknown_version" | "unknown_view" | "unknown_node" | "not_found" => 404,
        "duplicate_view" => 409,
        "unavailable" => 503,
        "quiesce_timeout" => 504,
        "corrupt" | "io_error" | "scheduling_error" => 500,
        _ => 400,
    }
}

struct Failure {
    code: String,
    message: String,
}

impl Failure {
    fn new(code: &str, message: impl Into<String>) -> Failure {
        Failure { code: code.to_string(), message: message.into() }
    }
}

impl From<ApplianceError> for Failure {
    fn from(e: ApplianceError) -> Failure {
        Failure::new(e.code(), e.to_string())
    }
}

type Outcome = Result<ApiResponse, Failure>;

fn body<T: DeserializeOwned>(text: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::new("bad_request", format!("request body: {e}")))
}

fn params(query: &str) -> Vec<(String, String)> {
    form_urlencoded::parse(query.as_bytes()).into_owned().collect()
}

fn param(query: &str, name: &str) -> Option<String> {
    params(query).into_iter().find(|(k, _)| k == name).map(|(_, v)| v)
}

fn doc_id(text: &str) -> Result<DocId, Failure> {
    text.parse().map_err(|e: String| Failure::new("bad_request", e))
}

fn ok(value: &impl Serialize) -> Outcome {
    Ok(ApiResponse::json(200, value))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocBody {
    format: SourceFormat,
    payload: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SearchBody {
    State { state: DrillState },
    Request(SearchRequest),
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum DrillAction {
    Down { facet: Path, value: TypedValue },
    Across { facets: Vec<Path> },
    Undo { index: usize },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DrillBody {
    state: DrillState,
    action: DrillAction,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JoinBody {
    flavor: String,
    capacity: Option<u64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum QuiesceBody {
    Named(String),
    Object { barrier: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WaitBody {
    ticks: u64,
}

#[derive(Serialize)]
struct SearchReply<'a, T: Serialize> {
    query: u64,
    state: &'a DrillState,
    result: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    materialized: Option<Value>,
}

fn persisted_json(p: &impliance::store::Persisted) -> Value {
    json!({
        "doc_id": p.doc_id.to_string(),
        "version": p.version.number(),
        "partition": p.partition.to_string(),
        "hash": format!("{:016x}", p.hash),
        "persisted_at": p.persisted_at.0,
        "replicas": p.replicas.iter().map(|n| n.0).collect::<Vec<_>>(),
    })
}

/// Reads wait for outstanding work when the configuration asks for it.
fn before_read(app: &mut Appliance) -> Result<(), Failure> {
    if app.config().scheduler.settle_before_read {
        app.settle()?;
    }
    Ok(())
}

fn search(app: &mut Appliance, state: DrillState) -> Outcome {
    before_read(app)?;
    let answer = app.drill(&state)?;
    let materialized = answer.materialized.as_ref().map(persisted_json);
    ok(&SearchReply { query: answer.query, state: &state, result: answer.value, materialized })
}

fn parse_flavor(text: &str) -> Result<impliance::query::Flavor, Failure> {
    use impliance::query::Flavor;
    match text {
        "data" => Ok(Flavor::Data),
        "grid" => Ok(Flavor::Grid),
        "cluster" => Ok(Flavor::Cluster),
        other => Err(Failure::new("invalid_request", format!("unknown node flavor {other:?}"))),
    }
}

fn route(app: &mut Appliance, req: &ApiRequest) -> Outcome {
    use Method::*;
    let segments: Vec<&str> = req.path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect();
    match (req.method, segments.as_slice()) {
        (Post, ["docs"]) => {
            let b: DocBody = body(&req.body)?;
            let p = app.ingest(b.format, b.payload.as_bytes())?;
            Ok(ApiResponse::json(201, &persisted_json(&p)))
        }
        (Put, ["docs", id]) => {
            let id = doc_id(id)?;
            let b: DocBody = body(&req.body)?;
            let p = app.update(id, b.format, b.payload.as_bytes())?;
            Ok(ApiResponse::json(201, &persisted_json(&p)))
        }
        (Get, ["docs", id]) => {
            let id = doc_id(id)?;
            let version = match param(&req.query, "version") {
                None => None,
                Some(v) => Some(
                    v.parse::<u32>()
                        .ok()
                        .and_then(VersionId::new)
                        .ok_or_else(|| Failure::new("bad_request", format!("bad version {v:?}")))?,
                ),
            };
            ok(&app.get(id, version)?)
        }
        (Post, ["search"]) => {
            let state = match body::<SearchBody>(&req.body)? {
                SearchBody::State { state } => state,
                SearchBody::Request(r) => DrillState::new(r),
            };
            search(app, state)
        }
        (Post, ["drill"]) => {
            let b: DrillBody = body(&req.body)?;
            let next = match b.action {
                DrillAction::Down { facet, value } => b.state.drill_down(facet, value),
                DrillAction::Across { facets } => Ok(b.state.drill_across(facets)),
                DrillAction::Undo { index } => b.state.undo(index),
            }
            .map_err(ApplianceError::from)?;
            search(app, next)
        }
        (Post, ["aggregate"]) => {
            let r: AggregateRequest = body(&req.body)?;
            before_read(app)?;
            let answer = app.aggregate(r)?;
            ok(&json!({ "query": answer.query, "rows": answer.value }))
        }
        (Get, ["connect"]) => {
            let a = doc_id(&param(&req.query, "a").ok_or_else(|| Failure::new("bad_request", "missing parameter a"))?)?;
            let b = doc_id(&param(&req.query, "b").ok_or_else(|| Failure::new("bad_request", "missing parameter b"))?)?;
            let max_hops = match param(&req.query, "max_hops") {
                Some(h) => h.parse().map_err(|_| Failure::new("bad_request", format!("bad max_hops {h:?}")))?,
                None => app.config().cluster.max_hops,
            };
            before_read(app)?;
            let answer = app.connect(ConnectionRequest { a, b, max_hops })?;
            ok(&json!({ "query": answer.query, "paths": answer.value }))
        }
        (Post, ["views"]) => {
            let view: ViewDef = body(&req.body)?;
            let name = view.name.clone();
            app.register_view(view)?;
            Ok(ApiResponse::json(201, &json!({ "name": name })))
        }
        (Post, ["views", name, "query"]) => {
            let mut value: Value = body(&req.body)?;
            let object =
                value.as_object_mut().ok_or_else(|| Failure::new("bad_request", "request body must be an object"))?;
            match object.get("view").and_then(Value::as_str) {
                Some(v) if v != *name => {
                    return Err(Failure::new("invalid_request", format!("body names view {v:?}, path names {name:?}")));
                }
                _ => {
                    object.insert("view".into(), Value::String(name.to_string()));
                }
            }
            let q: ViewQuery =
                serde_json::from_value(value).map_err(|e| Failure::new("bad_request", format!("request body: {e}")))?;
            before_read(app)?;
            let answer = app.view_query(q)?;
            let materialized = answer.materialized.as_ref().map(persisted_json);
            ok(&json!({ "query": answer.query, "result": answer.value, "materialized": materialized }))
        }
        (Get, ["topology"]) => ok(&app.topology_snapshot()),
        (Post, ["admin", "nodes"]) => {
            let b: JoinBody = body(&req.body)?;
            let flavor = parse_flavor(&b.flavor)?;
            let cluster = &app.config().cluster;
            let capacity = b.capacity.unwrap_or(match flavor {
                impliance::query::Flavor::Data => cluster.data_capacity,
                impliance::query::Flavor::Grid => cluster.grid_capacity,
                impliance::query::Flavor::Cluster => cluster.cluster_capacity,
            });
            let id = app.join_node(flavor, capacity)?;
            Ok(ApiResponse::json(201, &json!({ "node_id": id.0 })))
        }
        (Delete, ["admin", "nodes", id]) => {
            let id: u64 = id.parse().map_err(|_| Failure::new("bad_request", format!("bad node id {id:?}")))?;
            app.fail_node(NodeId(id))?;
            ok(&json!({ "node_id": id, "state": "failed", "tick": app.now() }))
        }
        (Post, ["admin", "annotators"]) => {
            let names = app.add_annotators(&req.body)?;
            Ok(ApiResponse::json(201, &json!({ "annotators": names })))
        }
        (Post, ["admin", "quiesce"]) => {
            let name = match body::<QuiesceBody>(&req.body)? {
                QuiesceBody::Named(n) | QuiesceBody::Object { barrier: n } => n,
            };
            let barrier: Barrier = name.parse().map_err(|e: String| Failure::new("invalid_request", e))?;
            let ticks = app.quiesce(barrier)?;
            ok(&json!({ "barrier": name, "ticks": ticks, "now": app.now() }))
        }
        (Post, ["admin", "wait"]) => {
            let b: WaitBody = body(&req.body)?;
            app.wait(b.ticks);
            ok(&json!({ "now": app.now() }))
        }
        (Get, ["metrics"]) => Ok(ApiResponse::text(app.metrics_report())),
        (Get, ["trace"]) => Ok(ApiResponse::text(app.trace_report())),
        (_, ["docs"] | ["docs", _] | ["search"] | ["drill"] | ["aggregate"] | ["connect"] | ["views"])
        | (_, ["views", _, "query"] | ["topology"] | ["metrics"] | ["trace"])
        | (
            _,
            ["admin", "nodes"]
            | ["admin", "nodes", _]
            | ["admin", "quiesce"]
            | ["admin", "wait"]
            | ["admin", "annotators"],
        ) => Err(Failure::new("method_not_allowed", format!("{:?} is not supported on {}", req.method, req.path))),
        _ => Err(Failure::new("not_found", format!("no endpoint {}", req.path))),
    }
}

/// Serves one request against the appliance.
pub fn handle(app: &mut Appliance, req: &ApiRequest) -> ApiResponse {
    match route(app, req) {
        Ok(r) => r,
        Err(f) => {
            let status = if f.code == "method_not_allowed" { 405 } else { status_for(&f.code) };
            ApiResponse::error(status, &f.code, &f.message)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use impliance::config::ApplianceConfig;

    fn app() -> Appliance {
        Appliance::new(ApplianceConfig::default(), 1).unwrap()
    }

    fn call(app: &mut Appliance, method: Method, target: &str, body: &str) -> ApiResponse {
        handle(app, &ApiRequest::new(method, target, body))
    }

    #[test]
    fn unknown_route_and_method() {
        let mut a = app();
        assert_eq!(call(&mut a, Method::Get, "/nowhere", "").status, 404);
        let r = call(&mut a, Method::Delete, "/search", "");
        assert_eq!((r.status, r.error_code().as_deref()), (405, Some("method_not_allowed")));
    }

    #[test]
    fn bad_json_is_a_bad_request() {
        let mut a = app();
        let r = call(&mut a, Method::Post, "/docs", "{");
        assert_eq!((r.status, r.error_code().as_deref()), (400, Some("bad_request")));
    }

    #[test]
    fn ingest_then_get() {
        let mut a = app();
        let r = call(&mut a, Method::Post, "/docs", r#"{"format":"delimited","payload":"1,Oslo,red"}"#);
        assert_eq!(r.status, 201, "{}", r.body);
        let v: Value = serde_json::from_str(&r.body).unwrap();
        let id = v["doc_id"].as_str().unwrap();
        let r = call(&mut a, Method::Get, &format!("/docs/{id}?version=1"), "");
        assert_eq!(r.status, 200);
        let r = call(&mut a, Method::Get, &format!("/docs/{id}?version=2"), "");
        assert_eq!(r.error_code().as_deref(), Some("unknown_version"));
    }

    #[test]
    fn statuses_follow_codes() {
        assert_eq!(status_for("unknown_doc"), 404);
        assert_eq!(status_for("unavailable"), 503);
        assert_eq!(status_for("parse_error"), 400);
    }
}
