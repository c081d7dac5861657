mod common;

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use common::*;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &axum::Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

#[tokio::test(start_paused = true)]
async fn five_turn_conversation_over_http() {
    let (engine, _) = golden_engine();
    let app = genrank::service::http::router(Arc::new(engine));

    let (st, created) = call(&app, Method::POST, "/sessions", Some(json!({"user_id": "simpson-user"}))).await;
    assert_eq!(st, StatusCode::CREATED);
    assert!(created["greeting"].as_str().unwrap().contains("simpson, It's good to have you back!"));
    let id = created["session_id"].as_str().unwrap().to_owned();

    let turns = format!("/sessions/{id}/turns");
    let (st, r) = call(&app, Method::POST, &turns, Some(json!({"text": "cool no problem do you know any movies"}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(r["source"], "MOVIES_RESPONSE");
    assert!(r.get("trace").is_none());

    let (_, r) = call(
        &app,
        Method::POST,
        &format!("{turns}?debug=1"),
        Some(json!({"text": "lets talk about sports instead"})),
    )
    .await;
    let trace = &r["trace"];
    assert_eq!(trace["route"], "ranked");
    let surviving = trace["candidates"].as_array().unwrap().iter().filter(|c| c["survived"] == true).count();
    assert!(surviving >= 2);
    assert!(trace["spans"].as_array().unwrap().iter().any(|s| s["stage"] == "fanout"));

    let (_, r) = call(&app, Method::POST, &turns, Some(json!({"text": "goodbye"}))).await;
    assert_eq!(r["source"], "RULE-BASED");
    let (_, r) = call(&app, Method::POST, &turns, Some(json!({"text": "stop"}))).await;
    assert_eq!(r["session_ended"], true);

    let (st, _) = call(&app, Method::POST, &turns, Some(json!({"text": "hello?"}))).await;
    assert_eq!(st, StatusCode::CONFLICT);

    let (st, metrics) = call(&app, Method::GET, "/metrics", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(metrics["turns"], 5);
    let (_, table) = call(&app, Method::GET, "/metrics?format=text", None).await;
    assert!(table.as_str().unwrap().contains("p95"));

    let (st, summary) = call(&app, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(summary["turns"], 5);
    assert_eq!(summary["traces"].as_array().unwrap().len(), 5);
}

#[tokio::test(start_paused = true)]
async fn http_error_statuses() {
    let (engine, _) = golden_engine();
    let app = genrank::service::http::router(Arc::new(engine));
    let (st, body) = call(&app, Method::POST, "/sessions/missing/turns", Some(json!({"text": "hi"}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("missing"));
    let (st, _) = call(&app, Method::DELETE, "/sessions/missing", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    let body = json!({"user_id": "u", "session_id": "same"});
    let (st, _) = call(&app, Method::POST, "/sessions", Some(body.clone())).await;
    assert_eq!(st, StatusCode::CREATED);
    let (st, _) = call(&app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = call(&app, Method::POST, "/sessions/same/turns", Some(json!({"text": "  "}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = call(&app, Method::POST, "/sessions", Some(json!({"user_id": ""}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = call(&app, Method::GET, "/healthz", None).await;
    assert_eq!(st, StatusCode::OK);
}
