use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use http_body_util::BodyExt;
use image::{ImageFormat, Rgb, RgbImage};
use palmverify_core::geometry::{
    derive_triple, frame_from_triple, roi_quad, BoxSizing, Hand, PalmAnnotation, Point2D,
};
use palmverify_core::matching::{
    decide, embed, match_against_gallery, normalize, StubEmbedder, DEFAULT_THRESHOLD,
};
use palmverify_core::pipeline::{run_pipeline, LookupDetector, PipelineConfig};
use palmverify_service::api::{FAIL_MESSAGE, RETRY_MESSAGE, SUCCESS_MESSAGE};
use palmverify_service::{router, AppState, TemplateStore};
use serde_json::{json, Value};
use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;
use tower::ServiceExt;

const SIZE: u32 = 256;

fn annotation() -> PalmAnnotation {
    PalmAnnotation::new(
        Some(Point2D::new(70.0, 120.0)),
        [
            Point2D::new(100.0, 80.0),
            Point2D::new(128.0, 72.0),
            Point2D::new(156.0, 80.0),
        ],
        SIZE as f64,
        SIZE as f64,
        Hand::Right,
        None,
    )
    .unwrap()
}

fn noise(seed: u32) -> RgbImage {
    // cheap deterministic hash noise
    RgbImage::from_fn(SIZE, SIZE, |x, y| {
        let mut h =
            x.wrapping_mul(73_856_093) ^ y.wrapping_mul(19_349_663) ^ seed.wrapping_mul(83_492_791);
        h ^= h >> 13;
        h = h.wrapping_mul(0x5bd1_e995);
        h ^= h >> 15;
        Rgb([h as u8, (h >> 8) as u8, (h >> 16) as u8])
    })
}

fn png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

struct Fixture {
    palm: RgbImage,
    other: RgbImage,
    blank: RgbImage,
    lookup: LookupDetector,
}

fn fixture() -> Fixture {
    let palm = noise(1);
    let other = noise(2);
    let mut lookup = LookupDetector::new();
    lookup
        .insert_annotated(&palm, &annotation(), &BoxSizing::default())
        .unwrap();
    lookup
        .insert_annotated(&other, &annotation(), &BoxSizing::default())
        .unwrap();
    Fixture {
        palm,
        other,
        blank: RgbImage::from_pixel(SIZE, SIZE, Rgb([0, 0, 0])),
        lookup,
    }
}

fn app(fx: &Fixture, store: &Path) -> Router {
    let state = AppState::new(
        Arc::new(fx.lookup.clone()),
        Arc::new(StubEmbedder::new(7)),
        PipelineConfig::default(),
        DEFAULT_THRESHOLD,
        TemplateStore::open(store).unwrap(),
    );
    router(state)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

fn post_json(path: &str, body: Value) -> Request<Body> {
    Request::post(path)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn image_body(user: &str, palm: &str, img: &RgbImage) -> Value {
    json!({ "user": user, "palm": palm, "image": B64.encode(png(img)) })
}

async fn enroll(app: &Router, user: &str, palm: &str, img: &RgbImage) -> (StatusCode, Value) {
    call(app, post_json("/enroll", image_body(user, palm, img))).await
}

async fn verify(app: &Router, user: &str, img: &RgbImage) -> (StatusCode, Value) {
    call(
        app,
        post_json(
            "/verify",
            json!({ "user": user, "image": B64.encode(png(img)) }),
        ),
    )
    .await
}

async fn counts(app: &Router, user: &str) -> Value {
    let (status, body) = call(
        app,
        Request::get(format!("/enrollments/{user}"))
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    body
}

#[tokio::test]
async fn enroll_verify_reset_flow() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = app(&fx, &dir.path().join("store.json"));

    assert_eq!(
        counts(&app, "alice").await,
        json!({"user": "alice", "left": 0, "right": 0})
    );
    assert_eq!(
        verify(&app, "alice", &fx.palm).await.0,
        StatusCode::NOT_FOUND
    );

    for k in 1..=3 {
        let (status, body) = enroll(&app, "alice", "left", &fx.palm).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["count"], k);
        if k == 1 {
            assert_eq!(counts(&app, "alice").await["left"], 1);
            let (status, body) = verify(&app, "alice", &fx.palm).await;
            assert_eq!(status, StatusCode::CONFLICT, "{body}");
        }
    }
    assert_eq!(
        counts(&app, "alice").await,
        json!({"user": "alice", "left": 3, "right": 0})
    );
    assert_eq!(
        enroll(&app, "alice", "left", &fx.palm).await.0,
        StatusCode::CONFLICT
    );

    let (status, body) = verify(&app, "alice", &fx.palm).await;
    assert_eq!(status, StatusCode::OK);
    assert!(
        (body["score"].as_f64().unwrap() - 1.0).abs() < 1e-6,
        "{body}"
    );
    assert_eq!(body["outcome"], "success");
    assert_eq!(body["message"], SUCCESS_MESSAGE);
    assert_eq!(body["palm"], "left");

    let (status, body) = verify(&app, "alice", &fx.other).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["score"].as_f64().unwrap() < 0.3, "{body}");
    assert_eq!(body["outcome"], "fail");
    assert_eq!(body["message"], FAIL_MESSAGE);

    let del = |palm: &str| {
        Request::delete(format!("/enrollments/alice/{palm}"))
            .body(Body::empty())
            .unwrap()
    };
    let (status, body) = call(&app, del("left")).await;
    assert_eq!((status, &body["count"]), (StatusCode::OK, &json!(0)));
    assert_eq!(call(&app, del("right")).await.0, StatusCode::NOT_FOUND);
    assert_eq!(
        verify(&app, "alice", &fx.palm).await.0,
        StatusCode::CONFLICT
    );

    for _ in 0..3 {
        assert_eq!(
            enroll(&app, "alice", "left", &fx.palm).await.0,
            StatusCode::OK
        );
    }
    assert_eq!(
        verify(&app, "alice", &fx.palm).await.1["outcome"],
        "success"
    );
}

#[tokio::test]
async fn scan_failures_and_bad_uploads() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = app(&fx, &dir.path().join("store.json"));

    let (status, body) = enroll(&app, "bob", "right", &fx.blank).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["message"], RETRY_MESSAGE);
    assert_eq!(counts(&app, "bob").await["right"], 0);

    let mut truncated = png(&fx.palm);
    truncated.truncate(truncated.len() / 3);
    let (status, _) = call(
        &app,
        post_json("/detect", json!({ "image": B64.encode(&truncated) })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(
        call(
            &app,
            post_json(
                "/enroll",
                json!({ "palm": "left", "image": B64.encode(png(&fx.palm)) })
            )
        )
        .await
        .0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        enroll(&app, "bob", "middle", &fx.palm).await.0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn detect_reports_geometry() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = app(&fx, &dir.path().join("store.json"));

    let (status, body) = call(
        &app,
        post_json("/detect", json!({ "image": B64.encode(png(&fx.palm)) })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["detections"].as_array().unwrap().len(), 3);
    let want = roi_quad(&frame_from_triple(&derive_triple(&annotation()).unwrap()).unwrap());
    let quad: [Point2D; 4] = serde_json::from_value(body["quad"].clone()).unwrap();
    for (got, want) in quad.iter().zip(want.corners) {
        assert!(got.distance(want) < 1e-9);
    }

    let (status, body) = call(
        &app,
        post_json("/detect", json!({ "image": B64.encode(png(&fx.blank)) })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "incomplete");
    assert!(body.get("quad").is_none());
}

#[tokio::test]
async fn multipart_upload_enrolls() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = app(&fx, &dir.path().join("store.json"));
    let boundary = "XyZboundary";
    let mut body = Vec::new();
    for (name, value) in [("user", "carol"), ("palm", "right")] {
        body.extend_from_slice(
            format!("--{boundary}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n").as_bytes(),
        );
    }
    body.extend_from_slice(
        format!("--{boundary}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"p.png\"\r\nContent-Type: image/png\r\n\r\n").as_bytes(),
    );
    body.extend_from_slice(&png(&fx.palm));
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    let req = Request::post("/enroll")
        .header(
            header::CONTENT_TYPE,
            format!("multipart/form-data; boundary={boundary}"),
        )
        .body(Body::from(body))
        .unwrap();
    let (status, resp) = call(&app, req).await;
    assert_eq!(status, StatusCode::OK, "{resp}");
    assert_eq!(resp["count"], 1);
    assert_eq!(resp["palm"], "right");
}

#[tokio::test]
async fn store_survives_restart_byte_identically() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.json");
    {
        let app = app(&fx, &path);
        for _ in 0..3 {
            enroll(&app, "dan", "right", &fx.palm).await;
        }
        enroll(&app, "dan", "left", &fx.other).await;
        enroll(&app, "erin", "left", &fx.other).await;
        call(
            &app,
            Request::delete("/enrollments/erin/left")
                .body(Body::empty())
                .unwrap(),
        )
        .await;
    }
    let before = std::fs::read(&path).unwrap();
    let reopened = TemplateStore::open(&path).unwrap();
    assert_eq!(reopened.to_json().as_bytes(), before.as_slice());
    let app = app(&fx, &path);
    assert_eq!(
        counts(&app, "dan").await,
        json!({"user": "dan", "left": 1, "right": 3})
    );
    assert_eq!(
        counts(&app, "erin").await,
        json!({"user": "erin", "left": 0, "right": 0})
    );
    assert_eq!(verify(&app, "dan", &fx.palm).await.1["outcome"], "success");
    assert_eq!(std::fs::read(&path).unwrap(), before);
}

#[tokio::test]
async fn decision_equals_core_matching() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.json");
    let app = app(&fx, &path);
    for img in [&fx.palm, &fx.other, &fx.palm] {
        enroll(&app, "fay", "left", img).await;
    }
    let store = TemplateStore::open(&path).unwrap();
    let gallery = store.record("fay", Hand::Left).unwrap().feature_vectors();
    let stub = StubEmbedder::new(7);
    for probe_img in [&fx.palm, &fx.other] {
        let roi = run_pipeline(probe_img, &fx.lookup, 0.25, 224).unwrap();
        let probe = normalize(&embed(&roi.pixels, &stub).unwrap()).unwrap();
        let (_, best) = match_against_gallery(&probe, &gallery).unwrap();
        let want = decide(best, DEFAULT_THRESHOLD);
        let (_, body) = verify(&app, "fay", probe_img).await;
        assert_eq!(body["score"].as_f64().unwrap(), want.score);
        assert_eq!(body["outcome"], serde_json::to_value(want.outcome).unwrap());
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_enrolls_never_exceed_three() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = app(&fx, &dir.path().join("store.json"));
    let body = image_body("gus", "right", &fx.palm);
    let tasks: Vec<_> = (0..10)
        .map(|_| {
            let app = app.clone();
            let body = body.clone();
            tokio::spawn(async move { call(&app, post_json("/enroll", body)).await.0 })
        })
        .collect();
    let mut ok = 0;
    for t in tasks {
        match t.await.unwrap() {
            StatusCode::OK => ok += 1,
            StatusCode::CONFLICT => {}
            other => panic!("unexpected status {other}"),
        }
    }
    assert_eq!(ok, 3);
    assert_eq!(counts(&app, "gus").await["right"], 3);
}
