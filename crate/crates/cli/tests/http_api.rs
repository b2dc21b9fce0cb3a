mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use paramnet_cli::server::{router, AppState};
use paramnet_core::image::decode_png;
use paramnet_core::model::Model;
use tower::ServiceExt;

const BOUNDARY: &str = "paramnet-test-boundary";

fn multipart(fields: &[(&str, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, data) in fields {
        body.extend_from_slice(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"").as_bytes(),
        );
        if matches!(*name, "image" | "reference") {
            body.extend_from_slice(b"; filename=\"x.png\"\r\nContent-Type: image/png");
        }
        body.extend_from_slice(b"\r\n\r\n");
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

fn infer_request(fields: &[(&str, &[u8])]) -> Request<Body> {
    Request::post("/infer")
        .header(
            "content-type",
            format!("multipart/form-data; boundary={BOUNDARY}"),
        )
        .body(Body::from(multipart(fields)))
        .unwrap()
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, headers, body)
}

fn make_app(ops: &[&str]) -> (tempfile::TempDir, Router) {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::load(&common::checkpoint(dir.path(), ops)).unwrap();
    (dir, router(AppState::new(model, common::scene(16, 16))))
}

#[tokio::test]
async fn health_is_always_ok() {
    let (_d, app) = make_app(&["gaussian"]);
    let (status, _, body) = call(&app, Request::get("/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"ok");
}

#[tokio::test]
async fn operators_lists_registry() {
    let (_d, app) = make_app(&["gaussian"]);
    let (status, _, body) = call(
        &app,
        Request::get("/operators").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(
        v,
        serde_json::json!([{ "name": "gaussian", "bounds": [{ "lower": 0.5, "upper": 2.0 }], "sampling": "linear", "param_dim": 1 }])
    );
    let (_d2, joint) = make_app(&["l0", "noise"]);
    let (_, _, body) = call(
        &joint,
        Request::get("/operators").body(Body::empty()).unwrap(),
    )
    .await;
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert_eq!(v[0]["sampling"], "log");
}

#[tokio::test]
async fn infer_returns_png_and_scores() {
    let (_d, app) = make_app(&["gaussian"]);
    let img = common::png(&common::scene(20, 12));
    let (status, headers, body) = call(
        &app,
        infer_request(&[
            ("image", &img),
            ("operator", b"gaussian"),
            ("params", b"1.0"),
        ]),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers["content-type"], "image/png");
    assert!(headers.get("x-psnr").is_none());
    let out = decode_png(&body).unwrap();
    assert_eq!((out.width(), out.height()), (12, 20));

    let (status, headers, _) = call(
        &app,
        infer_request(&[("image", &img), ("params", b"1.0"), ("reference", &img)]),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let psnr: f64 = headers["x-psnr"].to_str().unwrap().parse().unwrap();
    let ssim: f64 = headers["x-ssim"].to_str().unwrap().parse().unwrap();
    assert!(psnr > 0.0 && psnr <= 99.0 && (-1.0..=1.0).contains(&ssim));
}

#[tokio::test]
async fn out_of_bounds_param_is_400_with_bound() {
    let (_d, app) = make_app(&["gaussian"]);
    let img = common::png(&common::scene(8, 8));
    let (status, _, body) = call(&app, infer_request(&[("image", &img), ("params", b"0.1")])).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["field"], "gaussian");
    assert_eq!(v["bound"], 0.5);
    assert_eq!(v["given"], 0.1);
    let (_, _, body) = call(&app, infer_request(&[("image", &img), ("params", b"7")])).await;
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["bound"], 2.0);
}

#[tokio::test]
async fn oversized_image_is_413() {
    let (_d, app) = make_app(&["gaussian"]);
    let big = common::png(&paramnet_core::image::Image::constant(3, 4, 1025, 0.5).unwrap());
    let (status, _, _) = call(&app, infer_request(&[("image", &big), ("params", b"1")])).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn non_png_is_415() {
    let (_d, app) = make_app(&["gaussian"]);
    let ppm = paramnet_core::image::encode_ppm(&common::scene(8, 8)).unwrap();
    let (status, _, _) = call(&app, infer_request(&[("image", &ppm), ("params", b"1")])).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
}

#[tokio::test]
async fn malformed_requests_are_400() {
    let (_d, app) = make_app(&["gaussian"]);
    let img = common::png(&common::scene(8, 8));
    for fields in [
        vec![("params", b"1".as_slice())],
        vec![("image", img.as_slice())],
        vec![("image", img.as_slice()), ("params", b"abc".as_slice())],
        vec![
            ("image", img.as_slice()),
            ("params", b"1".as_slice()),
            ("operator", b"sharpen".as_slice()),
        ],
    ] {
        let (status, _, _) = call(&app, infer_request(&fields)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
    }
}

#[tokio::test]
async fn rf_returns_overlay_and_is_repeatable() {
    let (_d, app) = make_app(&["gaussian"]);
    let get = || {
        Request::get("/rf?x=5&y=7&gamma=1.5")
            .body(Body::empty())
            .unwrap()
    };
    let (status, headers, a) = call(&app, get()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers["content-type"], "image/png");
    let (_, _, b) = call(&app, get()).await;
    assert_eq!(a, b);
    assert_eq!(decode_png(&a).unwrap().width(), 16);
    let (status, _, _) = call(
        &app,
        Request::get("/rf?x=99&y=0&gamma=1")
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _, _) = call(
        &app,
        Request::get("/rf?x=1&y=1&gamma=9")
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn concurrent_requests_match_serial_results() {
    let (_d, app) = make_app(&["gaussian"]);
    let img = common::png(&common::scene(16, 16));
    let params = ["0.5", "1.0", "1.7", "2.0"];
    let mut serial = Vec::new();
    for p in params {
        serial.push(
            call(
                &app,
                infer_request(&[("image", &img), ("params", p.as_bytes())]),
            )
            .await
            .2,
        );
    }
    let handles: Vec<_> = params
        .iter()
        .map(|p| {
            let (app, img, p) = (app.clone(), img.clone(), p.to_string());
            tokio::spawn(async move {
                call(
                    &app,
                    infer_request(&[("image", &img), ("params", p.as_bytes())]),
                )
                .await
                .2
            })
        })
        .collect();
    for (h, s) in handles.into_iter().zip(serial) {
        assert_eq!(h.await.unwrap(), s);
    }
}

#[tokio::test]
async fn every_error_body_is_json() {
    let (_d, app) = make_app(&["gaussian"]);
    let img = common::png(&common::scene(8, 8));
    let requests = [
        Request::get("/rf?x=1").body(Body::empty()).unwrap(),
        Request::get("/rf?x=1&y=1&gamma=9")
            .body(Body::empty())
            .unwrap(),
        Request::post("/infer")
            .header("content-type", "text/plain")
            .body(Body::from("hi"))
            .unwrap(),
        infer_request(&[("image", img.as_slice())]),
        infer_request(&[("image", b"nope".as_slice()), ("params", b"1".as_slice())]),
    ];
    for req in requests {
        let (status, _, body) = call(&app, req).await;
        assert!(status.is_client_error());
        let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert!(v["error"].is_string());
    }
}
