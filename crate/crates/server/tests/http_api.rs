use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use xtom_core::engine::transcript::GameTranscript;
use xtom_core::engine::{GameSession, World};
use xtom_core::policy::{Explainer, PolicyConfig};
use xtom_server::{router, AppState, ServerOptions};

fn app_with(options: ServerOptions) -> axum::Router {
    let world = World::fixture();
    let explainer = Explainer::new(
        &world.grammar,
        PolicyConfig::default(),
        false,
        &mut ChaCha8Rng::seed_from_u64(4),
    );
    router(Arc::new(AppState::new(world, explainer, options)))
}

fn app() -> axum::Router {
    app_with(ServerOptions::default())
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    call_auth(app, method, uri, body, None).await
}

async fn call_auth(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
    token: Option<&str>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn create(app: &axum::Router, seed: u64) -> String {
    let (status, body) = call(
        app,
        "POST",
        "/sessions",
        Some(json!({"scene": "walk-01", "task": "action", "seed": seed})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["phase"], "PHASE1");
    assert_eq!(body["turn"], 0);
    body["id"].as_str().unwrap().to_owned()
}

fn assert_phase_turn(body: &Value) {
    assert!(body["phase"].is_string(), "missing phase in {body}");
    assert!(body["turn"].is_u64(), "missing turn in {body}");
}

#[tokio::test]
async fn health_reports_version_and_grammar() {
    let app = app();
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(body["grammar_hash"], World::fixture().grammar.hash().to_hex());
}

#[tokio::test]
async fn catalog_lists_questions() {
    let app = app();
    let (status, body) = call(&app, "GET", "/catalog/action", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["questions"].as_array().unwrap().len(), 11);
    assert!(body["labels"].as_array().unwrap().iter().any(|l| l == "walking"));
    let (status, body) = call(&app, "GET", "/catalog/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "UNKNOWN_TASK");
}

#[tokio::test]
async fn full_game_over_http() {
    let app = app();
    let id = create(&app, 11).await;
    let (_, catalog) = call(&app, "GET", "/catalog/action", None).await;
    let questions: Vec<String> = catalog["questions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|q| q["id"].as_str().unwrap().to_owned())
        .collect();

    let mut turn = 0;
    loop {
        let q = &questions[turn % questions.len()];
        let (status, body) = call(
            &app,
            "POST",
            &format!("/sessions/{id}/ask"),
            Some(json!({"question_id": q, "response_ms": 1200})),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_phase_turn(&body);
        turn += 1;
        assert_eq!(body["turn"], turn as u64);
        let bubble = &body["bubble"];
        for key in ["attention", "act", "sigma1", "sigma2", "discourse", "content"] {
            assert!(!bubble[key].is_null(), "bubble lacks {key}");
        }
        for key in ["cx", "cy", "r"] {
            assert!(bubble["region"][key].is_f64());
        }
        if turn == 1 {
            assert_eq!(bubble["discourse"], "SEQUENCE");
        }
        let answer = if turn == 3 { "walking" } else { "climbing" };
        let (status, body) = call(
            &app,
            "POST",
            &format!("/sessions/{id}/attempt"),
            Some(json!({"answer": answer, "cf": 4, "sf": 3})),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_phase_turn(&body);
        if body["phase"] == "PHASE2" {
            assert_eq!(body["ss"], 1);
            assert_eq!(body["phase_changed"], true);
            break;
        }
        assert_eq!(body["ss"], -1);
    }

    let (status, body) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["bubbles"].as_array().unwrap().len(), 3);
    assert_eq!(body["feedback"].as_array().unwrap().len(), 3);

    let (status, body) = call(&app, "GET", &format!("/sessions/{id}/phase2/questions"), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_phase_turn(&body);
    let answers: Vec<Value> = body["questions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|q| json!({"question": q["id"], "choice": q["choices"][0]}))
        .collect();
    let survey = json!({
        "usefulness": 7, "sufficiency": 6, "appropriate_detail": 5, "confidence": 8,
        "understandability": 7, "accuracy": 6, "consistency": 9
    });
    let (status, body) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/phase2/answers"),
        Some(json!({"answers": answers, "survey": survey})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["phase"], "DONE");
    assert_eq!(body["report"]["n_games"], 1);

    let (status, body) = call(&app, "GET", &format!("/sessions/{id}/report"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["phase"], "DONE");
    assert_eq!(body["report"]["es"].as_array().unwrap().len(), 7);

    let (status, body) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/ask"),
        Some(json!({"question_id": questions[0]})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "WRONG_PHASE");
    assert_eq!(body["phase"], "DONE");
}

#[tokio::test]
async fn errors_carry_code_and_message() {
    let app = app();
    let (status, body) = call(&app, "GET", "/sessions/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "UNKNOWN_SESSION");
    assert!(body["message"].is_string());

    let (status, body) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"scene": "nowhere", "task": "action"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "UNKNOWN_SCENE");

    let id = create(&app, 1).await;
    let (status, body) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/attempt"),
        Some(json!({"answer": "walking", "cf": 3, "sf": 3})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "NO_BUBBLES_YET");
    assert_eq!(body["phase"], "PHASE1");
    assert_eq!(body["turn"], 0);

    let (status, body) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/ask"),
        Some(json!({"question_id": "q-wings"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "UNKNOWN_QUESTION");

    let (status, body) = call(&app, "GET", &format!("/sessions/{id}/phase2/questions"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "WRONG_PHASE");

    call(
        &app,
        "POST",
        &format!("/sessions/{id}/ask"),
        Some(json!({"question_id": "q-head"})),
    )
    .await;
    let (status, body) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/attempt"),
        Some(json!({"answer": "walking", "cf": 9, "sf": 3})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "RANGE");
}

#[tokio::test]
async fn greedy_sessions_are_deterministic() {
    let app = app();
    let a = create(&app, 42).await;
    let b = create(&app, 42).await;
    for q in ["q-left-arm", "q-head", "q-left-foot", "q-torso"] {
        let (_, ra) = call(&app, "POST", &format!("/sessions/{a}/ask"), Some(json!({"question_id": q}))).await;
        let (_, rb) = call(&app, "POST", &format!("/sessions/{b}/ask"), Some(json!({"question_id": q}))).await;
        assert_eq!(ra["bubble"], rb["bubble"]);
        for id in [&a, &b] {
            call(
                &app,
                "POST",
                &format!("/sessions/{id}/attempt"),
                Some(json!({"answer": "climbing", "cf": 2, "sf": 2})),
            )
            .await;
        }
    }
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let app = app_with(ServerOptions {
        token: Some("s3cret".into()),
        ..Default::default()
    });
    let (status, _) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(&app, "GET", "/catalog/action", None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["code"], "UNAUTHORIZED");
    let (status, _) = call_auth(&app, "GET", "/catalog/action", None, Some("wrong")).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call_auth(&app, "GET", "/catalog/action", None, Some("s3cret")).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn transcripts_are_persisted_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(ServerOptions {
        transcript_dir: Some(dir.path().to_owned()),
        ..Default::default()
    });
    let id = create(&app, 9).await;
    for (q, answer) in [("q-left-leg", "sitting"), ("q-right-arm", "walking")] {
        call(&app, "POST", &format!("/sessions/{id}/ask"), Some(json!({"question_id": q}))).await;
        call(
            &app,
            "POST",
            &format!("/sessions/{id}/attempt"),
            Some(json!({"answer": answer, "cf": 5, "sf": 4})),
        )
        .await;
    }
    let (_, live) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(live["phase"], "PHASE2");

    let transcript = GameTranscript::read(&dir.path().join(format!("{id}.jsonl"))).unwrap();
    assert_eq!(transcript.events.len(), 5);
    let world = World::fixture();
    let explainer = Explainer::new(
        &world.grammar,
        PolicyConfig::default(),
        false,
        &mut ChaCha8Rng::seed_from_u64(4),
    );
    let replayed = GameSession::replay(&world, &explainer, &transcript).unwrap();
    assert_eq!(replayed.turn, 2);
    assert_eq!(serde_json::to_value(replayed.phase).unwrap(), live["phase"]);
}

#[tokio::test]
async fn scene_images_and_static_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>x-tom</html>").unwrap();
    let app = app_with(ServerOptions {
        static_dir: Some(dir.path().to_owned()),
        ..Default::default()
    });
    let resp = app
        .clone()
        .oneshot(Request::get("/scenes/walk-01/image").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()[header::CONTENT_TYPE], "image/svg+xml");
    let svg = resp.into_body().collect().await.unwrap().to_bytes();
    assert!(String::from_utf8_lossy(&svg).contains("<circle"));

    let (status, body) = call(&app, "GET", "/scenes/none/image", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "UNKNOWN_SCENE");

    let resp = app
        .clone()
        .oneshot(Request::get("/index.html").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}
