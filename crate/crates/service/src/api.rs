//! HTTP API. Every JSON body carries `"v": 1`; failures use [`ErrorBody`].

use std::collections::{BTreeSet, HashMap};
use std::io::{Cursor, Read};
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use femseg_core::evaluation::Source;
use femseg_core::femur::{delineate_femur, overlay_contour, Delineation, FemurParams, OVERLAY_WINDOW};
use femseg_core::image::{ImageBuffer, Kind, SOFT_TISSUE_WINDOW};
use femseg_core::pipeline::{parse_pipeline_spec, registry, run_pipeline, PipelineSpec};

use crate::error::{pipeline_detail, ApiError};
use crate::store::{JobState, Session, Store, StoreError, StoredDelineation};

type ApiResult<T> = Result<T, ApiError>;

/// Two delineations placed side by side, order possibly swapped.
#[derive(Debug, Clone)]
struct Pair {
    first: DelineationRef,
    second: DelineationRef,
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pairs: Arc<RwLock<HashMap<String, Pair>>>,
}

impl AppState {
    pub fn new(store: Arc<Store>) -> Self {
        Self {
            store,
            pairs: Arc::default(),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Dicom(e) => e.into(),
            StoreError::Pipeline(e) => e.into(),
            StoreError::Io(e) => e.into(),
            StoreError::BadName(_) => ApiError::unprocessable("BadName", e.to_string(), Value::Null),
            StoreError::WrongVolume { .. } => ApiError::unprocessable("WrongVolume", e.to_string(), Value::Null),
            StoreError::BadTransition(..) => ApiError::internal(e.to_string()),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "v": 1, "status": "ok" })) }))
        .route("/ops", get(list_ops))
        .route("/series", post(upload_series))
        .route("/series/{sid}", get(series_info))
        .route("/series/{sid}/slices/{file}", get(slice_png))
        .route("/series/{sid}/pipelines", post(save_pipeline).get(list_pipelines))
        .route("/series/{sid}/pipelines/{name}", get(get_pipeline))
        .route("/series/{sid}/run", post(run))
        .route("/series/{sid}/previews/{file}", get(preview_png))
        .route("/series/{sid}/delineate", post(delineate))
        .route("/series/{sid}/delineation", post(import_delineation))
        .route("/series/{sid}/delineation/{file}", get(delineation_json))
        .route("/series/{sid}/delineation/{id}/overlays/{file}", get(overlay_png))
        .route("/jobs/{jid}", get(job_status))
        .route("/compare", post(compare))
        .route("/compare/{pair}/{file}", get(compare_member))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .layer(DefaultBodyLimit::max(1 << 30))
        .with_state(state)
}

/// Binds `addr` and serves until the task is dropped. Returns the bound address
/// (useful with port 0).
pub async fn spawn(store: Arc<Store>, addr: SocketAddr) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let app = router(AppState::new(store));
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok((local, handle))
}

fn session(state: &AppState, sid: &str) -> ApiResult<Arc<Session>> {
    state
        .store
        .session(sid)
        .ok_or_else(|| ApiError::not_found(format!("no series {sid}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker panicked: {e}")))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], Body::from(bytes)).into_response()
}

/// `"12.png"` → 12.
fn strip_ext<'a>(file: &'a str, ext: &str) -> ApiResult<&'a str> {
    file.strip_suffix(ext)
        .ok_or_else(|| ApiError::not_found(format!("{file}: expected a {ext} resource")))
}

fn index_of(file: &str, ext: &str) -> ApiResult<usize> {
    strip_ext(file, ext)?
        .parse()
        .map_err(|_| ApiError::not_found(format!("{file}: not a slice index")))
}

#[derive(Debug, Default, Deserialize)]
struct WindowQuery {
    w: Option<f64>,
    l: Option<f64>,
}

impl WindowQuery {
    fn or(&self, default: (f64, f64)) -> ApiResult<(f64, f64)> {
        let w = self.w.unwrap_or(default.0);
        let l = self.l.unwrap_or(default.1);
        if !(w > 0.0 && w.is_finite() && l.is_finite()) {
            return Err(ApiError::bad_request("BadParam", format!("window width {w} / level {l}")));
        }
        Ok((w, l))
    }
}

async fn list_ops() -> Json<Value> {
    let ops: Vec<_> = registry().ops().collect();
    Json(json!({ "v": 1, "ops": ops }))
}

#[derive(Debug, Serialize)]
struct SeriesInfo {
    v: u32,
    session: String,
    slices: usize,
    dims: [usize; 2],
    pixel_spacing: [f64; 2],
    volume_digest: String,
    pipelines: Vec<String>,
}

fn info(s: &Session) -> SeriesInfo {
    let (w, h) = s.volume.dims();
    let (r, c) = s.volume.pixel_spacing();
    SeriesInfo {
        v: 1,
        session: s.id.clone(),
        slices: s.volume.len(),
        dims: [w, h],
        pixel_spacing: [r, c],
        volume_digest: s.volume.digest(),
        pipelines: s.pipeline_names(),
    }
}

fn is_dicom_name(name: &str) -> bool {
    let base = name.rsplit('/').next().unwrap_or(name);
    if base.is_empty() || base.starts_with('.') || name.starts_with("__MACOSX") {
        return false;
    }
    match base.rsplit_once('.') {
        None => true,
        Some((_, ext)) => ext.eq_ignore_ascii_case("dcm"),
    }
}

fn unzip(bytes: &[u8]) -> ApiResult<Vec<(String, Vec<u8>)>> {
    let bad = |e: zip::result::ZipError| ApiError::bad_request("BadArchive", e.to_string());
    let mut archive = zip::ZipArchive::new(Cursor::new(bytes)).map_err(bad)?;
    let mut files = Vec::new();
    for i in 0..archive.len() {
        let mut f = archive.by_index(i).map_err(bad)?;
        if f.is_dir() || !is_dicom_name(f.name()) {
            continue;
        }
        let name = f.name().to_string();
        let mut buf = Vec::with_capacity(f.size() as usize);
        f.read_to_end(&mut buf)
            .map_err(|e| ApiError::bad_request("BadArchive", e.to_string()))?;
        files.push((name, buf));
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(files)
}

async fn upload_series(State(state): State<AppState>, req: Request) -> ApiResult<Response> {
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    let files = if content_type.starts_with("multipart/form-data") {
        let mut mp = Multipart::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad_request("BadUpload", e.body_text()))?;
        let mut files = Vec::new();
        while let Some(field) = mp
            .next_field()
            .await
            .map_err(|e| ApiError::bad_request("BadUpload", e.body_text()))?
        {
            let name = field.file_name().or(field.name()).unwrap_or("").to_string();
            let data = field
                .bytes()
                .await
                .map_err(|e| ApiError::bad_request("BadUpload", e.body_text()))?;
            if data.starts_with(b"PK\x03\x04") {
                files.extend(unzip(&data)?);
            } else {
                files.push((name, data.to_vec()));
            }
        }
        files
    } else {
        let body = Bytes::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad_request("BadUpload", e.body_text()))?;
        if !body.starts_with(b"PK\x03\x04") {
            return Err(ApiError::new(
                StatusCode::UNSUPPORTED_MEDIA_TYPE,
                "BadUpload",
                "send a zip archive or multipart/form-data of DICOM files",
                Value::Null,
            ));
        }
        unzip(&body)?
    };
    if files.is_empty() {
        return Err(ApiError::bad_request("BadUpload", "no DICOM files in the upload"));
    }
    let store = state.store.clone();
    let (s, created) = blocking(move || store.ingest(files)).await??;
    tracing::info!(session = %s.id, slices = s.volume.len(), created, "series ingested");
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(info(&s))).into_response())
}

async fn series_info(State(state): State<AppState>, Path(sid): Path<String>) -> ApiResult<Json<SeriesInfo>> {
    let s = session(&state, &sid)?;
    Ok(Json(info(&s)))
}

async fn slice_png(
    State(state): State<AppState>,
    Path((sid, file)): Path<(String, String)>,
    Query(q): Query<WindowQuery>,
) -> ApiResult<Response> {
    let s = session(&state, &sid)?;
    let i = index_of(&file, ".png")?;
    if i >= s.volume.len() {
        return Err(ApiError::not_found(format!("slice {i} of {}", s.volume.len())));
    }
    let (w, l) = q.or(SOFT_TISSUE_WINDOW)?;
    Ok(png(s.volume.hu(i).window_level(w, l)?.to_png()))
}

async fn save_pipeline(State(state): State<AppState>, Path(sid): Path<String>, body: String) -> ApiResult<Response> {
    let s = session(&state, &sid)?;
    let spec = parse_pipeline_spec(&body)?;
    let name = state.store.save_pipeline(&s, spec)?;
    Ok((StatusCode::CREATED, Json(json!({ "v": 1, "name": name })) ).into_response())
}

async fn list_pipelines(State(state): State<AppState>, Path(sid): Path<String>) -> ApiResult<Json<Value>> {
    let s = session(&state, &sid)?;
    Ok(Json(json!({ "v": 1, "pipelines": s.pipeline_names() })))
}

async fn get_pipeline(State(state): State<AppState>, Path((sid, name)): Path<(String, String)>) -> ApiResult<Json<PipelineSpec>> {
    let s = session(&state, &sid)?;
    s.pipeline(&name)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no pipeline {name}")))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PipelineRef {
    Name(String),
    Inline(PipelineSpec),
}

#[derive(Debug, Clone, Copy, Deserialize)]
struct Window {
    w: f64,
    l: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    pipeline: PipelineRef,
    slice: usize,
    /// When present the pipeline runs on the windowed 8-bit slice (the same
    /// pixels as the slice PNG) instead of raw HU.
    #[serde(default)]
    window: Option<Window>,
}

#[derive(Debug, Serialize)]
struct StageView {
    index: usize,
    op: String,
    params_digest: String,
    digest: String,
    cache_hit: bool,
    wall_ms: f64,
    preview: String,
}

/// Windowed and rounded to the 8-bit grid.
pub fn display_slice(hu: &ImageBuffer, w: f64, l: f64) -> Result<ImageBuffer, femseg_core::OpError> {
    Ok(hu.window_level(w, l)?.map(Kind::Unit, f64::round))
}

fn bad_json(e: impl std::fmt::Display) -> ApiError {
    ApiError::bad_request("ParseError", e.to_string())
}

async fn run(State(state): State<AppState>, Path(sid): Path<String>, body: Bytes) -> ApiResult<Response> {
    let s = session(&state, &sid)?;
    let req: RunRequest = serde_json::from_slice(&body).map_err(bad_json)?;
    let spec = match req.pipeline {
        PipelineRef::Name(n) => s
            .pipeline(&n)
            .ok_or_else(|| ApiError::not_found(format!("no pipeline {n}")))?,
        PipelineRef::Inline(spec) => {
            spec.validate()?;
            spec
        }
    };
    if req.slice >= s.volume.len() {
        return Err(ApiError::not_found(format!("slice {} of {}", req.slice, s.volume.len())));
    }
    let input = match req.window {
        None => s.volume.hu(req.slice).clone(),
        Some(Window { w, l }) => display_slice(s.volume.hu(req.slice), w, l)
            .map_err(|e| ApiError::bad_request("BadParam", e.to_string()))?,
    };
    let cache = state.store.cache.clone();
    let result = blocking(move || {
        cache.put(&input.digest(), &input);
        let out = run_pipeline(&spec, &input, &cache);
        let images = match &out {
            Ok(o) => &o.intermediates,
            Err(f) => &f.intermediates,
        };
        for img in images {
            cache.put(&img.digest(), img);
        }
        out.map(|o| o.record).map_err(|f| (f.error, f.record))
    })
    .await?;
    let preview = |d: &str| format!("/series/{sid}/previews/{d}.png");
    let view = |rec: &femseg_core::pipeline::RunRecord| -> Vec<StageView> {
        rec.stages
            .iter()
            .map(|st| StageView {
                index: st.index,
                op: st.op.clone(),
                params_digest: st.params_digest.clone(),
                digest: st.output_digest.clone(),
                cache_hit: st.cache_hit,
                wall_ms: st.wall_ms,
                preview: preview(&st.output_digest),
            })
            .collect()
    };
    match result {
        Ok(rec) => Ok(Json(json!({
            "v": 1,
            "pipeline": rec.pipeline,
            "slice": req.slice,
            "input_digest": rec.input_digest,
            "input_preview": preview(&rec.input_digest),
            "output_digest": rec.output_digest,
            "executed": rec.executed,
            "stages": view(&rec),
        }))
        .into_response()),
        Err((error, rec)) => {
            let mut detail = pipeline_detail(&error);
            detail["completed"] = serde_json::to_value(view(&rec)).unwrap();
            Err(ApiError::unprocessable(error.name(), error.to_string(), detail))
        }
    }
}

async fn preview_png(
    State(state): State<AppState>,
    Path((sid, file)): Path<(String, String)>,
    Query(q): Query<WindowQuery>,
) -> ApiResult<Response> {
    session(&state, &sid)?;
    let digest = strip_ext(&file, ".png")?;
    if !(digest.len() == 32 && digest.bytes().all(|b| b.is_ascii_hexdigit())) {
        return Err(ApiError::not_found(format!("no preview {file}")));
    }
    let img = state
        .store
        .cache
        .get(digest)
        .ok_or_else(|| ApiError::not_found(format!("preview {digest} is not cached")))?;
    let bytes = match img.kind() {
        Kind::Hu => {
            let (w, l) = q.or(SOFT_TISSUE_WINDOW)?;
            img.window_level(w, l)?.to_png()
        }
        _ => img.to_png(),
    };
    Ok(png(bytes))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DelineateRequest {
    #[serde(default)]
    params: Option<FemurParams>,
}

async fn delineate(State(state): State<AppState>, Path(sid): Path<String>, body: Bytes) -> ApiResult<Response> {
    let s = session(&state, &sid)?;
    let req: DelineateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        DelineateRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::unprocessable("BadParams", e.to_string(), Value::Null))?
    };
    let params = req.params.unwrap_or_default();
    params.validate()?;
    let job = state.store.new_job(&s, params.clone())?;
    let (store, jid) = (state.store.clone(), job.id.clone());
    tokio::spawn(async move {
        let _slot = s.delineation_slot.lock().await;
        if let Err(e) = store.transition(&jid, JobState::Running, None) {
            tracing::error!("job {jid}: {e}");
            return;
        }
        let volume = s.volume.clone();
        let outcome = tokio::task::spawn_blocking(move || delineate_femur(&volume, &params)).await;
        let result = match outcome {
            Ok(Ok(ds)) => store
                .save_delineation(&s, &jid, Source::Automatic, ds)
                .map(|_| ())
                .map_err(ApiError::from),
            Ok(Err(e)) => Err(ApiError::from(e)),
            Err(e) => Err(ApiError::internal(format!("delineation panicked: {e}"))),
        };
        let transition = match result {
            Ok(()) => store.transition(&jid, JobState::Done, None),
            Err(e) => {
                tracing::warn!("job {jid} failed: {}", e.body.message);
                store.transition(&jid, JobState::Failed, Some(e.body))
            }
        };
        if let Err(e) = transition {
            tracing::error!("job {jid}: {e}");
        }
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "v": 1, "job": job.id, "status": format!("/jobs/{}", job.id) })),
    )
        .into_response())
}

async fn job_status(State(state): State<AppState>, Path(jid): Path<String>) -> ApiResult<Json<Value>> {
    let job = state
        .store
        .job(&jid)
        .ok_or_else(|| ApiError::not_found(format!("no job {jid}")))?;
    let mut body = serde_json::to_value(&job).unwrap();
    if job.state == JobState::Done {
        body["result"] = json!(format!("/series/{}/delineation/{}.json", job.session, job.id));
    }
    Ok(Json(body))
}

fn stored(state: &AppState, s: &Session, id: &str) -> ApiResult<StoredDelineation> {
    state
        .store
        .delineation(s, id)
        .ok_or_else(|| ApiError::not_found(format!("no delineation {id}")))
}

async fn delineation_json(State(state): State<AppState>, Path((sid, file)): Path<(String, String)>) -> ApiResult<Response> {
    let s = session(&state, &sid)?;
    let d = stored(&state, &s, strip_ext(&file, ".json")?)?;
    Ok(Json(d).into_response())
}

async fn overlay_png(
    State(state): State<AppState>,
    Path((sid, id, file)): Path<(String, String, String)>,
    Query(q): Query<WindowQuery>,
) -> ApiResult<Response> {
    let s = session(&state, &sid)?;
    let d = stored(&state, &s, &id)?;
    let i = index_of(&file, ".png")?;
    if i >= s.volume.len() {
        return Err(ApiError::not_found(format!("slice {i} of {}", s.volume.len())));
    }
    let contours: Vec<_> = d
        .delineations
        .iter()
        .filter_map(|x| x.slice(i).map(|sl| sl.contour()))
        .collect();
    let window = q.or(OVERLAY_WINDOW)?;
    let rgb = overlay_contour(s.volume.hu(i), &contours, window)?;
    Ok(png(rgb.to_png()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImportRequest {
    #[serde(default)]
    v: Option<u32>,
    delineations: Vec<Delineation>,
    #[serde(default = "manual")]
    source: Source,
}

fn manual() -> Source {
    Source::Manual
}

async fn import_delineation(State(state): State<AppState>, Path(sid): Path<String>, body: Bytes) -> ApiResult<Response> {
    let s = session(&state, &sid)?;
    let req: ImportRequest = serde_json::from_slice(&body).map_err(bad_json)?;
    if req.v.is_some_and(|v| v != 1) {
        return Err(ApiError::unprocessable("BadVersion", "only schema v 1 is understood", Value::Null));
    }
    let id = uuid::Uuid::new_v4().simple().to_string();
    state.store.save_delineation(&s, &id, req.source, req.delineations)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "v": 1, "id": id, "url": format!("/series/{sid}/delineation/{id}.json") })),
    )
        .into_response())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DelineationRef {
    session: String,
    delineation: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareRequest {
    left: DelineationRef,
    right: DelineationRef,
    #[serde(default)]
    shuffle: bool,
}

fn resolve(state: &AppState, r: &DelineationRef) -> ApiResult<StoredDelineation> {
    let s = session(state, &r.session)?;
    stored(state, &s, &r.delineation)
}

async fn compare(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: CompareRequest = serde_json::from_slice(&body).map_err(bad_json)?;
    let (a, b) = (resolve(&state, &req.left)?, resolve(&state, &req.right)?);
    let slices: BTreeSet<usize> = a
        .delineations
        .iter()
        .chain(&b.delineations)
        .flat_map(|d| d.slices.iter().map(|s| s.index))
        .collect();
    let swap = req.shuffle && rand::thread_rng().gen_bool(0.5);
    let (first, second) = if swap { (req.right, req.left) } else { (req.left, req.right) };
    let id = uuid::Uuid::new_v4().simple().to_string();
    state.pairs.write().unwrap().insert(id.clone(), Pair { first, second });
    Ok(Json(json!({
        "v": 1,
        "pair": id,
        "first": format!("/compare/{id}/first.json"),
        "second": format!("/compare/{id}/second.json"),
        "slices": slices,
    })))
}

/// `first.json` / `second.json` serve contours only; `reveal` names the sources
/// once the rater is done.
async fn compare_member(State(state): State<AppState>, Path((pair, file)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let p = state
        .pairs
        .read()
        .unwrap()
        .get(&pair)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no pair {pair}")))?;
    let blinded = |r: &DelineationRef| -> ApiResult<Value> {
        let d = resolve(&state, r)?;
        Ok(json!({ "v": 1, "delineations": d.delineations }))
    };
    match file.as_str() {
        "first.json" => blinded(&p.first).map(Json),
        "second.json" => blinded(&p.second).map(Json),
        "reveal" => {
            let (a, b) = (resolve(&state, &p.first)?, resolve(&state, &p.second)?);
            Ok(Json(json!({
                "v": 1,
                "first": { "session": a.session, "delineation": a.id, "source": a.source },
                "second": { "session": b.session, "delineation": b.id, "source": b.source },
            })))
        }
        _ => Err(ApiError::not_found(format!("no {file} in pair {pair}"))),
    }
}
