//! HTTP/JSON front end for game sessions.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

use xtom_core::aog::Process;
use xtom_core::engine::transcript::{append_event, Answer};
use xtom_core::engine::{BubbleWire, GameSession, Mode, Phase, Selection, World};
use xtom_core::evaluator::{EvalKind, EvalQuestion, SatisfactionSurvey, TrustReport};
use xtom_core::policy::Explainer;
use xtom_core::{Error, ErrorCode};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Bearer token required on every route except /health.
    pub token: Option<String>,
    /// Static assets served for paths no API route claims.
    pub static_dir: Option<PathBuf>,
    /// Session transcripts are appended here as `<id>.jsonl`.
    pub transcript_dir: Option<PathBuf>,
    /// Root for scene `image_ref` paths.
    pub image_dir: Option<PathBuf>,
}

struct Slot {
    session: GameSession,
    /// Transcript events already written to disk.
    persisted: usize,
}

pub struct AppState {
    world: World,
    explainer: Explainer,
    options: ServerOptions,
    sessions: RwLock<HashMap<String, Arc<Mutex<Slot>>>>,
    next_id: AtomicU64,
}

/// Error body `{code, message}`, plus the session's phase and turn when the
/// failure concerns a live session.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<u32>,
    #[serde(skip)]
    status: u16,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            code: code.to_owned(),
            message: message.into(),
            phase: None,
            turn: None,
            status: status.as_u16(),
        }
    }

    fn at(mut self, s: &GameSession) -> Self {
        self.phase = Some(s.phase);
        self.turn = Some(s.turn);
        self
    }
}

pub fn status_for(code: ErrorCode) -> StatusCode {
    use ErrorCode::*;
    match code {
        UnknownSession | UnknownScene | UnknownTask | UnknownQuestion => StatusCode::NOT_FOUND,
        WrongPhase | TurnLimit | NoBubblesYet | AlreadyAttempted | NoValidAction | EmptyPg => StatusCode::CONFLICT,
        Range | ConflictingAnswer | SchemaError | ConfigError => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::new(status_for(e.code), e.code.as_str(), e.message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateRequest {
    pub scene: String,
    pub task: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeedbackWire {
    pub ss: i8,
    pub cf: u8,
    pub sf: u8,
    pub reward: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SessionView {
    pub id: String,
    pub phase: Phase,
    pub turn: u32,
    pub scene: String,
    pub task: String,
    pub mode: Mode,
    pub seed: u64,
    pub attempts: u32,
    pub bubbles: Vec<BubbleWire>,
    pub feedback: Vec<FeedbackWire>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<TrustReport>,
}

impl SessionView {
    fn of(s: &GameSession, world: &World) -> Self {
        SessionView {
            id: s.id.clone(),
            phase: s.phase,
            turn: s.turn,
            scene: s.scene_id.clone(),
            task: s.task_id.clone(),
            mode: s.mode,
            seed: s.seed,
            attempts: s.attempts,
            bubbles: s.history.bubbles.iter().map(|b| BubbleWire::new(b, &world.grammar)).collect(),
            feedback: s
                .feedback
                .iter()
                .zip(s.rewards.iter())
                .map(|(f, &reward)| FeedbackWire {
                    ss: f.ss,
                    cf: f.cf,
                    sf: f.sf,
                    reward,
                })
                .collect(),
            report: s.report.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AskRequest {
    pub question_id: String,
    #[serde(default)]
    pub response_ms: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AskResponse {
    pub phase: Phase,
    pub turn: u32,
    pub bubble: BubbleWire,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttemptRequest {
    pub answer: String,
    pub cf: u8,
    pub sf: u8,
    #[serde(default)]
    pub response_ms: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AttemptResponse {
    pub phase: Phase,
    pub turn: u32,
    pub ss: i8,
    pub reward: f64,
    pub phase_changed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QuestionWire {
    pub id: String,
    pub kind: EvalKind,
    pub subject: String,
    pub process: Process,
    pub choices: Vec<String>,
}

impl QuestionWire {
    fn of(q: &EvalQuestion, world: &World) -> Self {
        QuestionWire {
            id: q.id.clone(),
            kind: q.kind,
            subject: world.grammar.name(q.subject).to_owned(),
            process: q.process,
            choices: q.choices.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Phase2Questions {
    pub phase: Phase,
    pub turn: u32,
    pub questions: Vec<QuestionWire>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phase2Request {
    pub answers: Vec<Answer>,
    #[serde(default)]
    pub survey: Option<SatisfactionSurvey>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportResponse {
    pub phase: Phase,
    pub turn: u32,
    pub report: TrustReport,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CatalogQuestion {
    pub id: String,
    pub text: String,
    pub subject: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CatalogResponse {
    pub task: String,
    pub labels: Vec<String>,
    pub questions: Vec<CatalogQuestion>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub grammar_hash: String,
}

impl AppState {
    pub fn new(world: World, explainer: Explainer, options: ServerOptions) -> Self {
        AppState {
            world,
            explainer,
            options,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>, ApiError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::from(Error::new(ErrorCode::UnknownSession, format!("no session `{id}`"))))
    }

    fn persist(&self, slot: &mut Slot) -> Result<(), ApiError> {
        let Some(dir) = &self.options.transcript_dir else {
            return Ok(());
        };
        let path = dir.join(format!("{}.jsonl", slot.session.id));
        for e in &slot.session.transcript.events[slot.persisted..] {
            append_event(&path, e)?;
        }
        slot.persisted = slot.session.transcript.events.len();
        Ok(())
    }
}

async fn health(State(app): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: VERSION.into(),
        grammar_hash: app.world.grammar.hash().to_hex(),
    })
}

async fn create_session(State(app): State<Arc<AppState>>, Json(req): Json<CreateRequest>) -> ApiResult<SessionView> {
    let n = app.next_id.fetch_add(1, Ordering::Relaxed);
    let id = format!("s-{n:06}");
    let seed = req.seed.unwrap_or(n);
    let session = GameSession::create(
        &app.world,
        &app.explainer,
        id.clone(),
        &req.scene,
        &req.task,
        Mode::Human,
        seed,
        Selection::GREEDY,
    )?;
    let mut slot = Slot { session, persisted: 0 };
    app.persist(&mut slot)?;
    let view = SessionView::of(&slot.session, &app.world);
    app.sessions
        .write()
        .expect("session map lock")
        .insert(id, Arc::new(Mutex::new(slot)));
    Ok(Json(view))
}

async fn get_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<SessionView> {
    let slot = app.slot(&id)?;
    let slot = slot.lock().await;
    Ok(Json(SessionView::of(&slot.session, &app.world)))
}

async fn ask(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<AskRequest>,
) -> ApiResult<AskResponse> {
    let slot = app.slot(&id)?;
    let mut slot = slot.lock().await;
    let bubble = slot
        .session
        .ask(&app.world, &app.explainer, &req.question_id, req.response_ms)
        .map_err(|e| ApiError::from(e).at(&slot.session))?;
    app.persist(&mut slot)?;
    Ok(Json(AskResponse {
        phase: slot.session.phase,
        turn: slot.session.turn,
        bubble: BubbleWire::new(&bubble, &app.world.grammar),
    }))
}

async fn attempt(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<AttemptRequest>,
) -> ApiResult<AttemptResponse> {
    let slot = app.slot(&id)?;
    let mut slot = slot.lock().await;
    let out = slot
        .session
        .submit_attempt(&app.world, &req.answer, req.cf, req.sf, req.response_ms)
        .map_err(|e| ApiError::from(e).at(&slot.session))?;
    app.persist(&mut slot)?;
    Ok(Json(AttemptResponse {
        phase: slot.session.phase,
        turn: slot.session.turn,
        ss: out.ss,
        reward: out.reward,
        phase_changed: out.phase_changed,
    }))
}

async fn phase2_questions(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Phase2Questions> {
    let slot = app.slot(&id)?;
    let slot = slot.lock().await;
    let questions = slot
        .session
        .phase2_questions(&app.world)
        .map_err(|e| ApiError::from(e).at(&slot.session))?;
    Ok(Json(Phase2Questions {
        phase: slot.session.phase,
        turn: slot.session.turn,
        questions: questions.iter().map(|q| QuestionWire::of(q, &app.world)).collect(),
    }))
}

async fn phase2_answers(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<Phase2Request>,
) -> ApiResult<ReportResponse> {
    let slot = app.slot(&id)?;
    let mut slot = slot.lock().await;
    let answers: Vec<(String, String)> = req.answers.into_iter().map(|a| (a.question, a.choice)).collect();
    let report = slot
        .session
        .run_phase2(&app.world, &answers, req.survey)
        .map_err(|e| ApiError::from(e).at(&slot.session))?;
    app.persist(&mut slot)?;
    Ok(Json(ReportResponse {
        phase: slot.session.phase,
        turn: slot.session.turn,
        report,
    }))
}

async fn report(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<ReportResponse> {
    let slot = app.slot(&id)?;
    let slot = slot.lock().await;
    match &slot.session.report {
        Some(r) => Ok(Json(ReportResponse {
            phase: slot.session.phase,
            turn: slot.session.turn,
            report: r.clone(),
        })),
        None => Err(ApiError::from(Error::new(ErrorCode::WrongPhase, "the game has not finished phase two"))
            .at(&slot.session)),
    }
}

async fn catalog(State(app): State<Arc<AppState>>, UrlPath(task): UrlPath<String>) -> ApiResult<CatalogResponse> {
    let t = app.world.task(&task)?;
    let catalog = app.world.catalog(&task)?;
    Ok(Json(CatalogResponse {
        task: t.id.clone(),
        labels: t.labels.clone(),
        questions: catalog
            .questions
            .iter()
            .map(|q| CatalogQuestion {
                id: q.id.clone(),
                text: q.text.clone(),
                subject: app.world.grammar.name(q.subject).to_owned(),
            })
            .collect(),
    }))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

/// Stand-in raster for scenes without an image: annotated parts as circles
/// on a 512x512 canvas.
pub fn placeholder_svg(world: &World, scene_id: &str) -> Result<String, Error> {
    let scene = world.scene(scene_id)?;
    let mut s = String::from(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"512\" height=\"512\" viewBox=\"0 0 512 512\">\
         <rect width=\"512\" height=\"512\" fill=\"#dcdcdc\"/>",
    );
    for (&v, region) in &scene.parts {
        let shade = if world.grammar.is_terminal(v) { "#5a6f8c" } else { "#9aa8bd" };
        s.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"{:.1}\" fill=\"{shade}\" fill-opacity=\"0.5\"><title>{}</title></circle>",
            region.cx * 512.0,
            region.cy * 512.0,
            region.r * 512.0,
            world.grammar.name(v)
        ));
    }
    s.push_str("</svg>");
    Ok(s)
}

async fn scene_image(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let scene = app.world.scene(&id)?;
    if let (Some(root), Some(rel)) = (&app.options.image_dir, &scene.image_ref) {
        let path = root.join(rel);
        if let Ok(bytes) = tokio::fs::read(&path).await {
            return Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response());
        }
    }
    let svg = placeholder_svg(&app.world, &id)?;
    Ok(([(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response())
}

async fn require_token(State(app): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.options.token {
        let expected = HeaderValue::from_str(&format!("Bearer {token}")).ok();
        let given = req.headers().get(header::AUTHORIZATION);
        if req.uri().path() != "/health" && given != expected.as_ref() {
            return ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: Arc<AppState>) -> Router {
    let mut router = Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/ask", post(ask))
        .route("/sessions/{id}/attempt", post(attempt))
        .route("/sessions/{id}/phase2/questions", get(phase2_questions))
        .route("/sessions/{id}/phase2/answers", post(phase2_answers))
        .route("/sessions/{id}/report", get(report))
        .route("/catalog/{task}", get(catalog))
        .route("/scenes/{id}/image", get(scene_image));
    if let Some(dir) = &state.options.static_dir {
        router = router.fallback_service(ServeDir::new(dir));
    }
    router
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(
    listener: TcpListener,
    world: World,
    explainer: Explainer,
    options: ServerOptions,
) -> xtom_core::Result<()> {
    if explainer.encoder.grammar != world.grammar.hash().short() {
        return Err(Error::new(
            ErrorCode::CheckpointError,
            "checkpoint was trained on a different grammar",
        ));
    }
    if let Some(dir) = &options.transcript_dir {
        std::fs::create_dir_all(dir)?;
    }
    let app = router(Arc::new(AppState::new(world, explainer, options)));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
