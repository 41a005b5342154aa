//! HTTP service: study upload and analysis, slice overlays, and completion
//! sessions with SSE suggestion streaming.

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;
use futures_util::Stream;
use radassist_core::completion::{Clock, StreamEnd};
use radassist_core::imaging::{extract_slice, parse_nifti, parse_raw, validate_alignment, ParseAs, Parsed};
use radassist_core::promptgen::{render_input_payload, split_side, Side};
use radassist_core::radiomics::{compute_organ, paired_ratio};
use radassist_core::router::Router;
use radassist_core::{
    rle, AcceptMode, Axis, Backend, BackendParams, CompletionSession, ImagingError, LabelMask, SessionError,
    StudyDescriptor, SuggestionStatus, TokenSink, VoxelVolume,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;

use crate::config::Config;
use crate::store::{EventLog, SessionMeta, Store, StoreError, StoredImage, StudyRecord};

/// Upload limit; abdominal CT volumes run to a few hundred megabytes.
pub const MAX_UPLOAD_BYTES: usize = 1 << 30;
const SSE_BUFFER: usize = 64;
pub const KIDNEY_RGB: [u8; 3] = [0, 0, 255];

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub error: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            error,
            message: message.into(),
        }
    }

    fn bad_request(error: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, error, message)
    }

    fn imaging(e: ImagingError) -> Self {
        Self::bad_request(e.name(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.error, "message": self.message}))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "StorageError", e.to_string())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::EmptyPrompt => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Backend(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::CONFLICT,
        };
        Self::new(status, e.name(), e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Wall-clock microseconds that never run backwards within the process.
struct ServiceClock {
    wall_at_start: u64,
    start: Instant,
}

impl ServiceClock {
    fn new() -> Self {
        let wall = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        Self {
            wall_at_start: wall.as_micros() as u64,
            start: Instant::now(),
        }
    }
}

impl Clock for ServiceClock {
    fn now_micros(&self) -> u64 {
        self.wall_at_start + self.start.elapsed().as_micros() as u64
    }
}

struct Study {
    record: Mutex<StudyRecord>,
    volume: VoxelVolume,
    mask: LabelMask,
}

struct LiveSession {
    session: CompletionSession,
    log: EventLog,
    /// Set while a suggestion streams; raising it stops the backend.
    cancel: Option<Arc<AtomicBool>>,
}

impl LiveSession {
    /// Runs `op` on a copy, appends the events it logged, then keeps the
    /// copy. A failed append leaves the in-memory session untouched.
    fn commit<R>(&mut self, op: impl FnOnce(&mut CompletionSession) -> Result<R, SessionError>) -> ApiResult<R> {
        let mut next = self.session.clone();
        let before = next.event_log().len();
        let out = op(&mut next)?;
        self.log.append(&next.event_log()[before..])?;
        self.session = next;
        Ok(out)
    }
}

type SessionSlot = Arc<Mutex<LiveSession>>;

struct Inner {
    store: Store,
    backend: Arc<dyn Backend>,
    max_tokens_default: u32,
    router: Router,
    clock: ServiceClock,
    studies: Mutex<HashMap<String, Arc<Study>>>,
    sessions: Mutex<HashMap<String, SessionSlot>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(store: Store, backend: Arc<dyn Backend>, max_tokens_default: u32) -> Self {
        Self(Arc::new(Inner {
            store,
            backend,
            max_tokens_default,
            router: Router::default(),
            clock: ServiceClock::new(),
            studies: Mutex::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
        }))
    }

    pub fn from_config(config: &Config) -> Result<Self, StartError> {
        let backend = config.backend.build().map_err(StartError::Config)?;
        let store = Store::open(&config.data_dir).map_err(StartError::Store)?;
        Ok(Self::new(store, backend, config.suggestion.max_tokens_default))
    }

    fn now(&self) -> u64 {
        self.0.clock.now_micros()
    }

    fn study(&self, id: &str) -> ApiResult<Arc<Study>> {
        if let Some(s) = self.0.studies.lock().unwrap().get(id) {
            return Ok(Arc::clone(s));
        }
        let record = self
            .0
            .store
            .get_study(id)?
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownStudy", format!("no study {id:?}")))?;
        let (volume, mask) = self.0.store.load_study_data(&record)?;
        let study = Arc::new(Study {
            record: Mutex::new(record),
            volume,
            mask,
        });
        let mut cache = self.0.studies.lock().unwrap();
        Ok(Arc::clone(cache.entry(id.to_owned()).or_insert(study)))
    }

    fn session(&self, id: &str) -> ApiResult<SessionSlot> {
        let mut cache = self.0.sessions.lock().unwrap();
        if let Some(s) = cache.get(id) {
            return Ok(Arc::clone(s));
        }
        // replay under the map lock so two requests cannot open two logs
        let (_, session, log) = self
            .0
            .store
            .load_session(id)?
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session {id:?}")))?;
        let slot = Arc::new(Mutex::new(LiveSession {
            session,
            log,
            cancel: None,
        }));
        cache.insert(id.to_owned(), Arc::clone(&slot));
        Ok(slot)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error(transparent)]
    Config(crate::config::ConfigError),
    #[error(transparent)]
    Store(StoreError),
}

pub fn router(state: AppState) -> axum::Router {
    axum::Router::new()
        .route("/health", get(health))
        .route("/studies", post(create_study))
        .route("/studies/{id}/analyze", post(analyze))
        .route("/studies/{id}/slices/{axis}/{index}", get(slice))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/suggestion", get(suggestion))
        .route("/sessions/{id}/accept", post(accept))
        .route("/sessions/{id}/reject", post(reject))
        .route("/sessions/{id}/edit", post(edit))
        .route("/sessions/{id}/cancel", post(cancel))
        .route("/sessions/{id}/report", get(report))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

pub async fn run(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

/// Empty bodies decode as `T::default()`.
fn body_or_default<T: DeserializeOwned + Default>(body: &[u8]) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("InvalidBody", e.to_string()))
}

fn body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("InvalidBody", e.to_string()))
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

// ---- studies ---------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct UploadDescriptor {
    #[serde(flatten)]
    study: StudyDescriptor,
    /// Label id → organ. Required for NIfTI masks; overrides a raw header's
    /// table when present.
    #[serde(default)]
    labels: BTreeMap<String, String>,
}

struct Part {
    bytes: Bytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UploadFormat {
    Nifti,
    Raw,
}

/// Picks a parser for an uploaded file. Compressed and DICOM files are
/// refused outright; anything else without a raw header goes to the NIfTI
/// parser, which rejects garbage with `BadMagic`.
pub fn detect_format(bytes: &[u8], has_raw_header: bool) -> Result<UploadFormat, ApiError> {
    let unsupported = |what: &str| {
        ApiError::new(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "UnsupportedFormat",
            format!("{what} uploads are not supported; send uncompressed NIfTI-1 or raw + header"),
        )
    };
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return Err(unsupported("gzip-compressed"));
    }
    if bytes.get(128..132) == Some(b"DICM") {
        return Err(unsupported("DICOM"));
    }
    Ok(if has_raw_header { UploadFormat::Raw } else { UploadFormat::Nifti })
}

fn parse_labels(labels: &BTreeMap<String, String>) -> ApiResult<BTreeMap<u32, String>> {
    labels
        .iter()
        .map(|(k, v)| {
            k.parse::<u32>()
                .map(|id| (id, v.clone()))
                .map_err(|_| ApiError::imaging(ImagingError::MalformedHeader(format!("label key {k:?}"))))
        })
        .collect()
}

/// Decodes one upload and names the files it will be stored under.
fn decode_upload(
    role: &str,
    part: &Part,
    header: Option<&Part>,
    target: ParseAs,
) -> ApiResult<(Parsed, StoredImage, Vec<(String, Bytes)>)> {
    match detect_format(&part.bytes, header.is_some())? {
        UploadFormat::Nifti => {
            let parsed = parse_nifti(&part.bytes, target).map_err(ApiError::imaging)?;
            let file = format!("{role}.nii");
            Ok((parsed, StoredImage::Nifti { file: file.clone() }, vec![(file, part.bytes.clone())]))
        }
        UploadFormat::Raw => {
            let header = header.expect("raw implies a header");
            let mut h: Value = serde_json::from_slice(&header.bytes)
                .map_err(|e| ApiError::imaging(ImagingError::MalformedHeader(e.to_string())))?;
            if let ParseAs::Mask(table) = &target {
                if !table.is_empty() {
                    let labels: BTreeMap<String, &String> = table.iter().map(|(k, v)| (k.to_string(), v)).collect();
                    h["labels"] = json!(labels);
                }
            }
            let header_bytes = Bytes::from(h.to_string());
            let parsed = parse_raw(&header_bytes, &part.bytes).map_err(ApiError::imaging)?;
            let (hf, df) = (format!("{role}.json"), format!("{role}.raw"));
            Ok((
                parsed,
                StoredImage::Raw {
                    header: hf.clone(),
                    data: df.clone(),
                },
                vec![(hf, header_bytes), (df, part.bytes.clone())],
            ))
        }
    }
}

fn new_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

async fn create_study(State(state): State<AppState>, mut multipart: Multipart) -> ApiResult<Response> {
    let mut parts: HashMap<String, Part> = HashMap::new();
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request("InvalidMultipart", e.body_text()))?
    {
        let name = field.name().unwrap_or_default().to_owned();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request("InvalidMultipart", e.body_text()))?;
        parts.insert(name, Part { bytes });
    }
    let record = blocking(move || {
        let take = |name: &str| {
            parts
                .get(name)
                .ok_or_else(|| ApiError::bad_request("MissingField", format!("multipart field {name:?} is required")))
        };
        let descriptor: UploadDescriptor = serde_json::from_slice(&take("descriptor")?.bytes)
            .map_err(|e| ApiError::bad_request("InvalidDescriptor", e.to_string()))?;
        let table = parse_labels(&descriptor.labels)?;
        let (image, image_stored, mut files) = decode_upload(
            "image",
            take("image")?,
            parts.get("image_header"),
            ParseAs::Image(descriptor.study.modality),
        )?;
        let (mask, mask_stored, mask_files) =
            decode_upload("mask", take("mask")?, parts.get("mask_header"), ParseAs::Mask(table))?;
        files.extend(mask_files);
        let (Parsed::Volume(volume), Parsed::Mask(mask)) = (image, mask) else {
            return Err(ApiError::bad_request(
                "WrongKind",
                "the image field must hold an image and the mask field a mask",
            ));
        };
        validate_alignment(&volume, &mask).map_err(ApiError::imaging)?;

        let study_id = new_id();
        let record = StudyRecord {
            study_id: study_id.clone(),
            route: state.0.router.route(&descriptor.study).ok(),
            descriptor: descriptor.study,
            image: image_stored,
            mask: mask_stored,
            label_table: mask.label_table().clone(),
            features: BTreeMap::new(),
            ratio: None,
        };
        let named: Vec<(&str, &[u8])> = files.iter().map(|(n, b)| (n.as_str(), &b[..])).collect();
        state.0.store.put_study_files(&study_id, &named)?;
        state.0.store.put_study(&record)?;
        state.0.studies.lock().unwrap().insert(
            study_id,
            Arc::new(Study {
                record: Mutex::new(record.clone()),
                volume,
                mask,
            }),
        );
        Ok(record)
    })
    .await?;
    let body = json!({
        "study_id": record.study_id,
        "route": record.route.as_ref().map(|r| r.pipeline_id.clone()),
        "labels": record.label_table,
    });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Debug, Deserialize)]
struct AnalyzeRequest {
    organs: Vec<String>,
}

/// The requested left/right pair of one base organ, if exactly one exists.
fn lateral_pair(organs: &[String]) -> Option<(&str, &str)> {
    let sided: Vec<(Option<Side>, String, &str)> = organs
        .iter()
        .map(|o| {
            let (side, base) = split_side(o);
            (side, base, o.as_str())
        })
        .collect();
    let left = sided.iter().find(|(s, _, _)| *s == Some(Side::Left))?;
    let right = sided
        .iter()
        .find(|(s, base, _)| *s == Some(Side::Right) && *base == left.1)?;
    Some((left.2, right.2))
}

async fn analyze(State(state): State<AppState>, Path(id): Path<String>, raw: Bytes) -> ApiResult<Json<Value>> {
    let req: AnalyzeRequest = body(&raw)?;
    if req.organs.is_empty() {
        return Err(ApiError::bad_request("NoOrgans", "organs must name at least one organ"));
    }
    let study = state.study(&id)?;
    blocking(move || {
        let mut record = study.record.lock().unwrap();
        let mut fresh = BTreeMap::new();
        for organ in &req.organs {
            if record.features.contains_key(organ) || fresh.contains_key(organ) {
                continue;
            }
            let f = compute_organ(&study.volume, &study.mask, organ)
                .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.name(), e.to_string()))?;
            fresh.insert(organ.clone(), f);
        }
        let mut changed = !fresh.is_empty();
        record.features.extend(fresh);
        let ratio = match lateral_pair(&req.organs) {
            Some((l, r)) => {
                let ratio = paired_ratio(&record.features[l], &record.features[r])
                    .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.name(), e.to_string()))?;
                if record.ratio != Some(ratio) {
                    record.ratio = Some(ratio);
                    changed = true;
                }
                Some(ratio)
            }
            None => None,
        };
        if changed {
            state.0.store.put_study(&record)?;
        }
        let features: BTreeMap<&String, _> = req.organs.iter().map(|o| (o, &record.features[o])).collect();
        let mut out = json!({ "features": features });
        if let Some(r) = ratio {
            out["ratio"] = json!(r);
        }
        Ok(Json(out))
    })
    .await
}

/// Display colour for an organ; the UI owns rendering, this is a hint.
pub fn organ_rgb(organ: &str) -> [u8; 3] {
    let (_, base) = split_side(organ);
    match base.trim_end_matches('s') {
        "kidney" => KIDNEY_RGB,
        "liver" => [165, 42, 42],
        "spleen" => [128, 0, 128],
        "pancrea" | "pancreas" => [255, 165, 0],
        "bladder" | "urinary bladder" => [255, 255, 0],
        "aorta" => [255, 0, 0],
        "adrenal gland" | "adrenal" => [0, 200, 200],
        _ => {
            // stable but arbitrary for anything else
            let h = base.bytes().fold(2166136261u32, |h, b| (h ^ b as u32).wrapping_mul(16777619));
            [(h >> 16) as u8 | 0x40, (h >> 8) as u8 | 0x40, h as u8 & 0x7f]
        }
    }
}

async fn slice(
    State(state): State<AppState>,
    Path((id, axis, index)): Path<(String, String, String)>,
) -> ApiResult<Json<Value>> {
    let axis: Axis = axis
        .parse()
        .map_err(|_| ApiError::bad_request("InvalidAxis", format!("axis {axis:?} is not x, y or z")))?;
    let index: usize = index
        .parse()
        .map_err(|_| ApiError::bad_request("InvalidIndex", format!("{index:?} is not a slice index")))?;
    let study = state.study(&id)?;
    let raster = extract_slice(&study.mask, axis, index).map_err(ApiError::imaging)?;
    let mut palette = BTreeMap::new();
    for name in study.mask.label_table().values() {
        palette.insert(name.clone(), organ_rgb(name));
        palette.insert(split_side(name).1, organ_rgb(name));
    }
    Ok(Json(json!({
        "axis": raster.axis,
        "index": raster.index,
        "width": raster.width,
        "height": raster.height,
        "labels": rle::encode(&raster.labels),
        "label_table": study.mask.label_table(),
        "palette": palette,
    })))
}

// ---- sessions --------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct CreateSession {
    study_id: String,
    organ: String,
    #[serde(default)]
    prefix: Option<String>,
}

async fn create_session(State(state): State<AppState>, raw: Bytes) -> ApiResult<Response> {
    let req: CreateSession = body(&raw)?;
    let study = state.study(&req.study_id)?;
    let (payload, base) = {
        let record = study.record.lock().unwrap();
        let (_, base) = split_side(&req.organ);
        let features: Vec<_> = record
            .features
            .values()
            .filter(|f| split_side(&f.organ).1 == base)
            .cloned()
            .collect();
        if features.is_empty() {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "NotAnalyzed",
                format!("study has no analysis for {:?}; call analyze first", req.organ),
            ));
        }
        let ratio = record.ratio.filter(|_| features.len() == 2);
        let payload = render_input_payload(&features, ratio.as_ref(), &base)
            .map_err(|e| ApiError::new(StatusCode::CONFLICT, "NotAnalyzed", e.to_string()))?;
        (payload, base)
    };
    let meta = SessionMeta {
        session_id: new_id(),
        study_id: req.study_id,
        organ: base,
        feature_payload: payload,
        initial_text: req.prefix.unwrap_or_default(),
    };
    let log = state.0.store.create_session(&meta)?;
    let session = CompletionSession::new(&meta.session_id, &meta.organ, &meta.feature_payload, &meta.initial_text);
    state.0.sessions.lock().unwrap().insert(
        meta.session_id.clone(),
        Arc::new(Mutex::new(LiveSession {
            session,
            log,
            cancel: None,
        })),
    );
    Ok((
        StatusCode::CREATED,
        Json(json!({"session_id": meta.session_id, "feature_payload": meta.feature_payload})),
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
struct SuggestionQuery {
    max_tokens: Option<u32>,
}

#[derive(Debug, Serialize)]
struct TokenEvent<'a> {
    text: &'a str,
    index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DoneEvent {
    pub suggestion_id: u64,
    pub token_count: usize,
    pub elapsed_ms: f64,
    pub tokens_per_sec: f64,
}

fn sse_event(name: &str, data: &impl Serialize) -> Event {
    Event::default()
        .event(name)
        .data(serde_json::to_string(data).expect("event serializes"))
}

/// Forwards tokens into the session and onto the SSE channel.
struct StreamSink {
    slot: SessionSlot,
    suggestion_id: u64,
    tx: mpsc::Sender<Event>,
    cancel: Arc<AtomicBool>,
    index: usize,
}

impl TokenSink for StreamSink {
    fn token(&mut self, token: &str) -> ControlFlow<()> {
        if self.cancelled() {
            return ControlFlow::Break(());
        }
        // a cancel request may have ended the suggestion already
        if self
            .slot
            .lock()
            .unwrap()
            .session
            .push_token(self.suggestion_id, token)
            .is_err()
        {
            return ControlFlow::Break(());
        }
        let event = sse_event(
            "token",
            &TokenEvent {
                text: token,
                index: self.index,
            },
        );
        if self.tx.blocking_send(event).is_err() {
            // client went away
            self.cancel.store(true, Ordering::SeqCst);
            return ControlFlow::Break(());
        }
        self.index += 1;
        ControlFlow::Continue(())
    }

    fn cancelled(&self) -> bool {
        self.cancel.load(Ordering::SeqCst) || self.tx.is_closed()
    }
}

fn run_suggestion(state: AppState, slot: SessionSlot, id: u64, prompt: String, params: BackendParams, cancel: Arc<AtomicBool>, tx: mpsc::Sender<Event>) {
    let mut sink = StreamSink {
        slot: Arc::clone(&slot),
        suggestion_id: id,
        tx: tx.clone(),
        cancel,
        index: 0,
    };
    let result = state.0.backend.generate(&prompt, &params, &mut sink);
    let mut live = slot.lock().unwrap();
    live.cancel = None;
    let still_streaming = live
        .session
        .current()
        .is_some_and(|s| s.id == id && s.status == SuggestionStatus::Streaming);
    let now = state.now();
    let event = match result {
        _ if !still_streaming => sse_event("cancelled", &json!({"suggestion_id": id})),
        Ok(StreamEnd::Finished) => match live.commit(|s| s.finish_suggestion(id, now).cloned()) {
            Ok(done) => sse_event(
                "done",
                &DoneEvent {
                    suggestion_id: id,
                    token_count: done.tokens.len(),
                    elapsed_ms: done.elapsed_micros().unwrap_or(1) as f64 / 1000.0,
                    tokens_per_sec: done.tokens_per_sec.unwrap_or(0.0),
                },
            ),
            Err(e) => sse_event("error", &json!({"error": e.error, "message": e.message})),
        },
        Ok(StreamEnd::Cancelled) => {
            let aborted = live.commit(|s| s.abort_suggestion(id, now));
            match aborted {
                Ok(s) => sse_event("cancelled", &json!({"suggestion_id": id, "token_count": s.tokens.len()})),
                Err(e) => sse_event("error", &json!({"error": e.error, "message": e.message})),
            }
        }
        Err(e) => {
            let _ = live.commit(|s| s.abort_suggestion(id, now));
            sse_event("error", &json!({"error": e.name(), "message": e.to_string()}))
        }
    };
    drop(live);
    // the client may be gone; nothing left to do then
    let _ = tx.blocking_send(event);
}

async fn suggestion(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SuggestionQuery>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let max_tokens = q.max_tokens.unwrap_or(state.0.max_tokens_default);
    if max_tokens == 0 {
        return Err(ApiError::bad_request("InvalidParams", "max_tokens must be at least 1"));
    }
    let slot = state.session(&id)?;
    let cancel = Arc::new(AtomicBool::new(false));
    let (suggestion_id, prompt) = {
        let mut live = slot.lock().unwrap();
        let begun = live.session.begin_suggestion(state.now())?;
        live.cancel = Some(Arc::clone(&cancel));
        begun
    };
    let (tx, rx) = mpsc::channel(SSE_BUFFER);
    let params = BackendParams::with_max_tokens(max_tokens);
    let worker_state = state.clone();
    tokio::task::spawn_blocking(move || run_suggestion(worker_state, slot, suggestion_id, prompt, params, cancel, tx));
    let stream = futures_util::stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|e| (Ok::<_, Infallible>(e), rx))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Default, Deserialize)]
struct AcceptRequest {
    #[serde(default)]
    mode: Option<String>,
}

pub fn parse_accept_mode(s: &str) -> Option<AcceptMode> {
    match s.to_ascii_lowercase().replace(['_', '-', ' '], "").as_str() {
        "full" => Some(AcceptMode::Full),
        "firstword" | "word" => Some(AcceptMode::FirstWord),
        _ => None,
    }
}

async fn accept(State(state): State<AppState>, Path(id): Path<String>, raw: Bytes) -> ApiResult<Json<Value>> {
    let req: AcceptRequest = body_or_default(&raw)?;
    let mode = match req.mode.as_deref() {
        None => AcceptMode::Full,
        Some(m) => parse_accept_mode(m)
            .ok_or_else(|| ApiError::bad_request("InvalidMode", format!("mode {m:?} is not Full or FirstWord")))?,
    };
    let slot = state.session(&id)?;
    let mut live = slot.lock().unwrap();
    let now = state.now();
    let taken = live.commit(|s| s.accept(mode, now))?;
    let accepted = match mode {
        AcceptMode::Full => taken.text(),
        AcceptMode::FirstWord => live
            .session
            .event_log()
            .last()
            .map(|e| e.payload.clone())
            .unwrap_or_default(),
    };
    Ok(Json(json!({
        "accepted_text": live.session.accepted_text(),
        "accepted": accepted,
        "remainder": live.session.current().map(|s| s.text()),
    })))
}

async fn reject(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = state.session(&id)?;
    let mut live = slot.lock().unwrap();
    let now = state.now();
    let rejected = live.commit(|s| s.reject(now))?;
    Ok(Json(json!({"accepted_text": live.session.accepted_text(), "rejected": rejected.text()})))
}

#[derive(Debug, Deserialize)]
struct EditRequest {
    text: String,
}

async fn edit(State(state): State<AppState>, Path(id): Path<String>, raw: Bytes) -> ApiResult<Json<Value>> {
    let req: EditRequest = body(&raw)?;
    let slot = state.session(&id)?;
    let mut live = slot.lock().unwrap();
    let now = state.now();
    live.commit(|s| s.edit(&req.text, now))?;
    Ok(Json(json!({"accepted_text": live.session.accepted_text()})))
}

async fn cancel(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = state.session(&id)?;
    let mut live = slot.lock().unwrap();
    if let Some(flag) = &live.cancel {
        flag.store(true, Ordering::SeqCst);
    }
    let now = state.now();
    let cancelled = live.commit(|s| s.cancel(now))?;
    Ok(Json(json!({
        "accepted_text": live.session.accepted_text(),
        "suggestion_id": cancelled.id,
        "token_count": cancelled.tokens.len(),
    })))
}

async fn report(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = state.session(&id)?;
    let live = slot.lock().unwrap();
    let s = &live.session;
    let pending = s
        .current()
        .filter(|c| c.status == SuggestionStatus::Complete)
        .map(|c| c.text());
    Ok(Json(json!({
        "session_id": s.id,
        "organ": s.organ,
        "feature_payload": s.feature_payload,
        "accepted_text": s.accepted_text(),
        "event_count": s.event_log().len(),
        "streaming": s.is_streaming(),
        "suggestion": pending,
    })))
}
