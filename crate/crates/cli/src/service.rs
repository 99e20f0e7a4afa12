//! HTTP facade over one completed run directory.
//!
//! Reads come from the loaded run; flag writes go through a single mutex
//! around the run's flag journal. Filter requests take a snapshot of the
//! flags when they start.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;
use uncx::concepts::{attribution_map, top_activating_segments, Provenance, SegmentHit};
use uncx::flags::{FlagEntry, FlagStore};
use uncx::grouping::Group;
use uncx::pipeline::{filter_report, load_run, FilterReport, FlagSource, LoadedRun, RejectionReport, RunReport};
use uncx::strategies::{Curve, FilterMethod};
use uncx::Error;

use crate::commands::{parse_methods, run_filter, ErrorBody, FlagChoice, FILTER_FILE, REJECT_FILE};

pub struct AppState {
    run_dir: PathBuf,
    loaded: LoadedRun,
    flags: Mutex<FlagStore>,
}

impl AppState {
    pub fn open(run_dir: impl AsRef<Path>) -> uncx::Result<Self> {
        let run_dir = run_dir.as_ref().to_path_buf();
        let loaded = load_run(&run_dir)?;
        let flags = Mutex::new(FlagStore::open(&run_dir)?);
        Ok(Self { run_dir, loaded, flags })
    }
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::ConceptOutOfRange { .. } | Error::MissingFile(_) => StatusCode::NOT_FOUND,
            e if e.is_input_error() => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody::from(&self.0))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// The `/api` routes plus, when given, the UI bundle at `/`.
pub fn router(state: Arc<AppState>, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/run", get(get_run))
        .route("/api/concepts", get(get_concepts))
        .route("/api/concepts/{id}/top-segments", get(get_top_segments))
        .route("/api/items/{id}/attribution", get(get_attribution))
        .route("/api/flags", get(get_flags).post(post_flag))
        .route("/api/filter", post(post_filter))
        .route("/api/curves", get(get_curves))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async {
            ApiError(Error::MissingFile(PathBuf::from("no UI directory configured"))).into_response()
        }),
    }
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(run_dir: &Path, addr: &str, ui_dir: Option<&Path>) -> uncx::Result<()> {
    let state = Arc::new(AppState::open(run_dir)?);
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => Error::AddrInUse(addr.to_string()),
        _ => Error::InvalidArgument(format!("cannot bind {addr}: {e}")),
    })?;
    eprintln!("serving {} on http://{addr}", run_dir.display());
    axum::serve(listener, router(state, ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(addr, e))
}

pub fn serve_blocking(run_dir: &Path, addr: &str, ui_dir: Option<&Path>) -> uncx::Result<()> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io(addr, e))?;
    rt.block_on(serve(run_dir, addr, ui_dir))
}

async fn get_run(State(state): State<Arc<AppState>>) -> Json<RunReport> {
    Json(state.loaded.report.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptEntry {
    pub id: usize,
    pub provenance: Provenance,
    pub index: usize,
    pub global_importance: f64,
    pub rank: usize,
    pub flagged: bool,
}

async fn get_concepts(State(state): State<Arc<AppState>>) -> ApiResult<Vec<ConceptEntry>> {
    let flagged: BTreeSet<usize> = lock(&state).flagged().into_iter().collect();
    Ok(Json(
        state
            .loaded
            .report
            .concepts
            .iter()
            .map(|c| ConceptEntry {
                id: c.id,
                provenance: c.provenance,
                index: c.index,
                global_importance: c.global_importance,
                rank: c.rank,
                flagged: flagged.contains(&c.id),
            })
            .collect(),
    ))
}

fn lock(state: &AppState) -> std::sync::MutexGuard<'_, FlagStore> {
    state.flags.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Debug, Deserialize)]
pub struct TopQuery {
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTile {
    #[serde(flatten)]
    pub hit: SegmentHit,
    /// `(row, col)` of the segment when the item has a grid.
    pub position: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopSegments {
    pub concept: usize,
    pub provenance: Provenance,
    pub segments: Vec<SegmentTile>,
}

/// Top segments of a concept within the group its bank was learned on,
/// scored by that bank's own coefficients.
async fn get_top_segments(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<usize>,
    Query(q): Query<TopQuery>,
) -> ApiResult<TopSegments> {
    let run = &state.loaded.run;
    let items = &state.loaded.dataset.manifest.items;
    let c = run.concept(id)?;
    let (w, group) = match c.bank {
        Provenance::Certain => (&run.w_cer, Group::Certain),
        Provenance::Uncertain => (&run.w_unc, Group::Uncertain),
        Provenance::Combined => return Err(Error::ConceptOutOfRange { concept: id, available: run.w_combined.ncols() }.into()),
    };
    let members = items.iter().zip(&run.assignments).filter(|(_, a)| a.group == group).map(|(i, _)| i);
    let hits = top_activating_segments(w.view(), members, c.index, q.k.unwrap_or(6))?;
    let segments = hits
        .into_iter()
        .map(|hit| {
            let grid = state.loaded.dataset.manifest.item_index(&hit.item_id).and_then(|i| items[i].grid);
            SegmentTile {
                position: grid.map(|(_, w)| (hit.segment / w, hit.segment % w)),
                hit,
            }
        })
        .collect();
    Ok(Json(TopSegments {
        concept: id,
        provenance: c.bank,
        segments,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub item_id: String,
    pub grid: Option<(usize, usize)>,
    pub concepts: usize,
    /// One row per segment, one column per combined concept.
    pub values: Vec<Vec<f64>>,
    pub f_value: f64,
    pub group: Group,
    /// Local importance of every combined concept.
    pub local_importance: Vec<f64>,
}

async fn get_attribution(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Attribution> {
    let run = &state.loaded.run;
    let manifest = &state.loaded.dataset.manifest;
    let i = manifest
        .item_index(&id)
        .ok_or_else(|| Error::MissingFile(PathBuf::from(format!("item {id}"))))?;
    let item = &manifest.items[i];
    let map = attribution_map(run.w_combined.view(), item)?;
    let d = run.w_combined.ncols();
    Ok(Json(Attribution {
        item_id: item.id.clone(),
        grid: item.grid,
        concepts: d,
        values: map.values().chunks(d).map(<[f64]>::to_vec).collect(),
        f_value: run.assignments[i].f_value,
        group: run.assignments[i].group,
        local_importance: run.local.row(i).to_vec(),
    }))
}

async fn get_flags(State(state): State<Arc<AppState>>) -> Json<Vec<FlagEntry>> {
    Json(lock(&state).current())
}

#[derive(Debug, Deserialize)]
pub struct FlagRequest {
    pub concept: usize,
    pub flagged: bool,
    #[serde(default)]
    pub note: String,
}

async fn post_flag(State(state): State<Arc<AppState>>, Json(req): Json<FlagRequest>) -> ApiResult<FlagEntry> {
    let c = state.loaded.run.concept(req.concept)?;
    if c.bank != Provenance::Uncertain {
        return Err(Error::FlagNotInUncertainBank(req.concept).into());
    }
    let entry = lock(&state).append(FlagEntry {
        concept: req.concept,
        flagged: req.flagged,
        note: req.note,
        timestamp: 0,
    })?;
    Ok(Json(entry))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct FilterRequest {
    /// One method name; ignored when `methods` is given.
    pub method: Option<String>,
    pub methods: Option<Vec<String>>,
    /// Explicit flags; otherwise the journal snapshot is used.
    pub flags: Option<Vec<usize>>,
    pub auto_flag: bool,
}

async fn post_filter(
    State(state): State<Arc<AppState>>,
    body: Option<Json<FilterRequest>>,
) -> ApiResult<FilterReport> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let names: Vec<String> = match (req.methods, req.method) {
        (Some(m), _) => m,
        (None, Some(m)) => vec![m],
        (None, None) => vec!["all".into()],
    };
    let methods: Vec<FilterMethod> = parse_methods(&names)?;
    let choice = match (req.flags, req.auto_flag) {
        (Some(f), _) => FlagChoice::Explicit(f),
        (None, true) => FlagChoice::Auto,
        (None, false) => FlagChoice::Journal,
    };
    // read the journal now so later flag writes do not leak into this request
    let snapshot = match choice {
        FlagChoice::Journal => Some(lock(&state).flagged()),
        _ => None,
    };
    let report = tokio::task::spawn_blocking(move || match snapshot {
        Some(flags) => filter_report(&state.loaded.run, &state.loaded.dataset, &flags, FlagSource::Journal, None, &methods),
        None => run_filter(&state.run_dir, &state.loaded, &choice, &methods),
    })
    .await
    .map_err(|e| Error::InvalidArgument(e.to_string()))??;
    Ok(Json(report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCurve {
    pub method: String,
    pub kind: String,
    pub curve: Curve,
}

/// Curves from the reports `filter` and `reject` left in the run directory.
async fn get_curves(State(state): State<Arc<AppState>>) -> ApiResult<Vec<NamedCurve>> {
    let mut out = Vec::new();
    let read = |name: &str| -> uncx::Result<Option<String>> {
        let path = state.run_dir.join(name);
        if !path.is_file() {
            return Ok(None);
        }
        std::fs::read_to_string(&path).map(Some).map_err(|e| Error::io(&path, e))
    };
    if let Some(text) = read(FILTER_FILE)? {
        let report: FilterReport =
            serde_json::from_str(&text).map_err(|e| Error::json(state.run_dir.join(FILTER_FILE), e))?;
        for m in report.methods {
            if let Some(curve) = m.curve {
                out.push(NamedCurve {
                    method: m.method.name().into(),
                    kind: "kept_useful".into(),
                    curve,
                });
            }
        }
    }
    if let Some(text) = read(REJECT_FILE)? {
        let report: RejectionReport =
            serde_json::from_str(&text).map_err(|e| Error::json(state.run_dir.join(REJECT_FILE), e))?;
        for m in report.curves.methods {
            let name = m.method.name().to_string();
            out.push(NamedCurve {
                method: name.clone(),
                kind: "accuracy_rejection".into(),
                curve: m.accuracy_curve,
            });
            if let Some(curve) = m.ood_curve {
                out.push(NamedCurve {
                    method: name,
                    kind: "ood_rejection".into(),
                    curve,
                });
            }
        }
    }
    Ok(Json(out))
}
