use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use tokio::net::TcpListener;

use super::{AnnotationDraft, AnnotationStore};
use crate::error::{Error, Result};
use crate::minecore::{SelectionFile, UnitEntriesFile};
use crate::numkernel::Rect;
use crate::synthdata::read_manifest;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Mining output: `selection.json` and `units/`.
    pub mining_dir: PathBuf,
    pub dataset_dir: PathBuf,
    pub explanations_dir: PathBuf,
    pub store_path: PathBuf,
}

/// Everything the handlers read, loaded once at startup.
pub struct AppState {
    pub selection: SelectionFile,
    pub units: BTreeMap<usize, UnitEntriesFile>,
    unit_dirs: BTreeMap<usize, PathBuf>,
    images: BTreeMap<String, PathBuf>,
    explanations_dir: PathBuf,
    pub store: Arc<AnnotationStore>,
}

pub fn load_state(cfg: &ServerConfig) -> Result<AppState> {
    let selection = SelectionFile::load(&cfg.mining_dir.join("selection.json"))?;
    let mut units = BTreeMap::new();
    let mut unit_dirs = BTreeMap::new();
    for u in selection.unit_ids() {
        let dir = cfg.mining_dir.join("units").join(format!("unit_{u}"));
        let path = dir.join("entries.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let entries: UnitEntriesFile = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        units.insert(u, entries);
        unit_dirs.insert(u, dir);
    }
    let images = read_manifest(&cfg.dataset_dir)?
        .into_iter()
        .map(|r| (r.image_id, cfg.dataset_dir.join(r.image)))
        .collect();
    let store = AnnotationStore::open(&cfg.store_path, selection.unit_ids())?;
    Ok(AppState {
        selection,
        units,
        unit_dirs,
        images,
        explanations_dir: cfg.explanations_dir.clone(),
        store: Arc::new(store),
    })
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownUnit { .. } => StatusCode::NOT_FOUND,
            Error::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn not_found(what: String) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, what)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct UnitSummary {
    unit_id: usize,
    frequency: usize,
    annotated: bool,
    annotation_count: usize,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ClassGroup {
    class_id: usize,
    class_name: String,
    coverage: f64,
    units: Vec<UnitSummary>,
}

async fn list_units(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    let records = state.store.list(None);
    let annotated = state.store.annotated_units();
    let classes: Vec<ClassGroup> = state
        .selection
        .classes
        .iter()
        .map(|c| ClassGroup {
            class_id: c.class_id,
            class_name: c.class_name.clone(),
            coverage: c.coverage,
            units: c
                .unit_ids
                .iter()
                .map(|&u| UnitSummary {
                    unit_id: u,
                    frequency: c.frequency.get(&u).copied().unwrap_or(0),
                    annotated: annotated.contains(&u),
                    annotation_count: records.iter().filter(|r| r.annotation.unit_id == u).count(),
                })
                .collect(),
        })
        .collect();
    let total: usize = classes.iter().map(|c| c.units.len()).sum();
    Json(json!({
        "unitCount": state.selection.unit_count,
        "selectedCount": total,
        "classes": classes,
    }))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct EntryView {
    rank: usize,
    image_id: String,
    patch_rect: Rect,
    activation: f64,
    receptive_field: Rect,
    crop_url: String,
    mask_url: String,
    segmented_url: String,
    context_image: String,
}

fn unit_entries(state: &AppState, id: usize) -> ApiResult<&UnitEntriesFile> {
    state.store.check_unit(id)?;
    state
        .units
        .get(&id)
        .ok_or_else(|| not_found(format!("unit {id} has no visualization")))
}

async fn get_unit(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<usize>) -> ApiResult<impl IntoResponse> {
    let file = unit_entries(&state, id)?;
    let url = |name: &str| format!("/api/units/{id}/files/{name}");
    let entries: Vec<EntryView> = file
        .entries
        .iter()
        .map(|e| EntryView {
            rank: e.rank,
            image_id: e.image_id.clone(),
            patch_rect: e.patch_rect,
            activation: e.activation,
            receptive_field: e.receptive_field,
            crop_url: url(&e.crop),
            mask_url: url(&e.mask),
            segmented_url: url(&e.segmented),
            context_image: e.context_image.clone(),
        })
        .collect();
    let classes: Vec<usize> = state
        .selection
        .classes
        .iter()
        .filter(|c| c.unit_ids.contains(&id))
        .map(|c| c.class_id)
        .collect();
    Ok(Json(json!({ "unitId": id, "classIds": classes, "entries": entries })))
}

fn pgm_response(path: &Path) -> ApiResult<Response> {
    let bytes = std::fs::read(path).map_err(|e| ApiError::from(Error::io(path, e)))?;
    Ok(([(header::CONTENT_TYPE, "image/x-portable-graymap")], bytes).into_response())
}

async fn get_unit_file(
    State(state): State<Arc<AppState>>,
    UrlPath((id, name)): UrlPath<(usize, String)>,
) -> ApiResult<Response> {
    let file = unit_entries(&state, id)?;
    let known = file
        .entries
        .iter()
        .any(|e| [&e.crop, &e.mask, &e.segmented].contains(&&name));
    if !known {
        return Err(not_found(format!("unit {id} has no file {name}")));
    }
    pgm_response(&state.unit_dirs[&id].join(name))
}

async fn get_image(State(state): State<Arc<AppState>>, UrlPath(image_id): UrlPath<String>) -> ApiResult<Response> {
    let path = state
        .images
        .get(&image_id)
        .ok_or_else(|| not_found(format!("unknown image {image_id}")))?;
    pgm_response(path)
}

async fn get_explanation(
    State(state): State<Arc<AppState>>,
    UrlPath(image_id): UrlPath<String>,
) -> ApiResult<Response> {
    if !state.images.contains_key(&image_id) {
        return Err(not_found(format!("unknown image {image_id}")));
    }
    let path = state.explanations_dir.join(format!("{image_id}.json"));
    match std::fs::read(&path) {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(not_found(format!("no explanation for {image_id}")))
        }
        Err(e) => Err(Error::io(&path, e).into()),
    }
}

async fn list_annotations(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<usize>,
) -> ApiResult<impl IntoResponse> {
    state.store.check_unit(id)?;
    Ok(Json(state.store.list(Some(id))))
}

async fn post_annotation(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<usize>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let draft: AnnotationDraft = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("malformed annotation: {e}")))?;
    let store = Arc::clone(&state.store);
    let id = tokio::task::spawn_blocking(move || store.save(id, draft))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

const INDEX: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>unit annotation</title></head>
<body>
<h1>Unit annotation service</h1>
<ul>
<li><a href=\"/api/units\">/api/units</a></li>
<li>/api/units/{id}</li>
<li>/api/units/{id}/annotations</li>
<li>/api/images/{imageId}</li>
<li>/api/explanations/{imageId}</li>
</ul>
</body></html>
";

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/", get(|| async { Html(INDEX) }))
        .route("/api/units", get(list_units))
        .route("/api/units/{id}", get(get_unit))
        .route("/api/units/{id}/files/{name}", get(get_unit_file))
        .route("/api/units/{id}/annotations", get(list_annotations).post(post_annotation))
        .route("/api/images/{image_id}", get(get_image))
        .route("/api/explanations/{image_id}", get(get_explanation))
        .with_state(state)
}

/// Serves on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Loads artifacts, binds `addr` and serves until Ctrl-C.
pub async fn run(cfg: &ServerConfig, addr: SocketAddr) -> Result<()> {
    let state = Arc::new(load_state(cfg)?);
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    let bound = listener.local_addr().map_err(|e| Error::Config(e.to_string()))?;
    log::info!(
        "serving {} selected units on http://{bound}",
        state.selection.unit_ids().len()
    );
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    serve(listener, state, shutdown)
        .await
        .map_err(|e| Error::Config(format!("server failed: {e}")))
}

