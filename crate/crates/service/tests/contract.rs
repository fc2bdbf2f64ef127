use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use edit_service::api::{Center, ErrorBody, GenerateResponse, ModelInfo, ResetResponse, COORD_BOUND};
use edit_service::{cors, router, serve, AppState, Model, ServeOptions};
use eqgan::config::TrainConfig;
use eqgan::heatmap::{gaussian_bump, level_sum, Coord2D, HeatmapPyramid};
use eqgan::trainer::TrainState;
use serde_json::{json, Value};

/// A briefly trained blob checkpoint shared by every test in this file.
fn checkpoint() -> &'static Path {
    static DIR: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    let (_, path) = DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let overrides: Vec<String> = ["latent_dim=16", "g_channels=[8,8,4,4]", "d_channels=[4,4,8,8]", "batch_size=4"]
            .map(String::from)
            .to_vec();
        let mut state = TrainState::new(TrainConfig::from_toml_str("", &overrides).unwrap()).unwrap();
        for _ in 0..3 {
            state.train_step().unwrap();
        }
        let path = dir.path().join("model.bin");
        state.save(&path).unwrap();
        (dir, path)
    });
    path
}

async fn start(state: AppState) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state, cors(&[]))).await.unwrap() });
    format!("http://{addr}")
}

async fn live() -> String {
    start(AppState::with_model(Model::load(checkpoint()).unwrap(), Some(7))).await
}

fn request(seed: u64, overlays: bool) -> Value {
    json!({
        "seed": seed,
        "centers": [
            [{"y": 0.1, "x": -0.2}],
            [{"y": 0.3, "x": -0.4}, {"y": -0.1, "x": 0.25}],
            [{"y": 0.0, "x": 0.0}, {"y": 0.6, "x": -0.8}, {"y": -0.5, "x": 0.5}, {"y": 0.2, "x": 0.9}],
        ],
        "include_overlays": overlays,
    })
}

async fn generate(base: &str, body: &Value) -> reqwest::Response {
    reqwest::Client::new().post(format!("{base}/generate")).json(body).send().await.unwrap()
}

fn decode_png(b64: &str) -> image::DynamicImage {
    image::load_from_memory(&BASE64.decode(b64).unwrap()).unwrap()
}

fn file_sha256(path: &Path) -> String {
    eqgan::checkpoint::file_hash(path).unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn model_info_is_stable() {
    let base = live().await;
    let get = || async { reqwest::get(format!("{base}/model/info")).await.unwrap() };
    let first = get().await;
    assert_eq!(first.status(), 200);
    let a: ModelInfo = first.json().await.unwrap();
    let b: ModelInfo = get().await.json().await.unwrap();
    assert_eq!(a, b);
    assert_eq!(a.counts, vec![1, 2, 4]);
    assert_eq!(a.level_resolutions, vec![4, 8, 16]);
    assert_eq!((a.base_res, a.channels, a.levels, a.step), (32, 1, 3, 3));
    assert_eq!(a.coord_bound, COORD_BOUND);
    assert_eq!(a.conditioning, "norm");
    assert_eq!(a.checkpoint_hash, file_sha256(checkpoint()));
}

#[tokio::test(flavor = "multi_thread")]
async fn identical_requests_give_identical_images() {
    let base = live().await;
    let a: GenerateResponse = generate(&base, &request(11, false)).await.json().await.unwrap();
    let b: GenerateResponse = generate(&base, &request(11, false)).await.json().await.unwrap();
    assert_eq!(a.image, b.image);
    assert_eq!(a, b);
    let c: GenerateResponse = generate(&base, &request(12, false)).await.json().await.unwrap();
    assert_ne!(a.image, c.image);

    let img = decode_png(&a.image);
    assert_eq!((img.width(), img.height()), (32, 32));
    assert_eq!(a.heatmaps.len(), 3);
    for h in &a.heatmaps {
        let h = decode_png(h);
        assert_eq!((h.width(), h.height()), (32, 32));
    }
    assert!(a.attn.is_none());
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_identical_requests_agree() {
    let base = live().await;
    let body = request(5, true);
    let jobs: Vec<_> = (0..6)
        .map(|_| {
            let (base, body) = (base.clone(), body.clone());
            tokio::spawn(async move { generate(&base, &body).await.json::<GenerateResponse>().await.unwrap() })
        })
        .collect();
    let info = reqwest::get(format!("{base}/model/info")).await.unwrap();
    assert_eq!(info.status(), 200);
    let mut out = Vec::new();
    for j in jobs {
        out.push(j.await.unwrap());
    }
    assert!(out.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test(flavor = "multi_thread")]
async fn overlays_come_back_per_level() {
    let base = live().await;
    let r: GenerateResponse = generate(&base, &request(3, true)).await.json().await.unwrap();
    let attn = r.attn.unwrap();
    assert_eq!(attn.len(), 3);
    for a in attn {
        let img = decode_png(&a);
        assert_eq!((img.width(), img.height()), (32, 32));
        assert!(img.as_rgb8().is_some());
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn invalid_requests_are_rejected_with_the_field() {
    let base = live().await;
    let mut three = request(1, false);
    three["centers"][1] = json!([{"y": 0, "x": 0}, {"y": 0, "x": 0}, {"y": 0, "x": 0}]);
    let cases = [
        (three, "centers[1]"),
        (json!({"seed": 1, "centers": [[{"y": 0, "x": 0}]]}), "centers"),
        (json!({"seed": "one", "centers": []}), "seed"),
        (json!({"centers": []}), "seed"),
        (json!({"seed": 1, "centers": [[{"y": 0}]]}), "centers[0][0].x"),
    ];
    for (body, field) in cases {
        let resp = generate(&base, &body).await;
        assert_eq!(resp.status(), 400, "{body}");
        let err: ErrorBody = resp.json().await.unwrap();
        assert_eq!(err.field.as_deref(), Some(field), "{}", err.error);
        assert!(!err.error.is_empty());
    }
    let resp = reqwest::Client::new().post(format!("{base}/generate")).body("{not json").send().await.unwrap();
    assert_eq!(resp.status(), 400);
}

#[tokio::test(flavor = "multi_thread")]
async fn centers_are_clamped_to_the_wire_bound() {
    let base = live().await;
    let mut body = request(1, false);
    body["centers"][0][0] = json!({"y": -3.0, "x": 1.2});
    let r: GenerateResponse = generate(&base, &body).await.json().await.unwrap();
    assert_eq!(r.centers[0][0], Center { y: -COORD_BOUND, x: 1.2 });
    body["centers"][0][0] = json!({"y": -COORD_BOUND, "x": 1.2});
    let same: GenerateResponse = generate(&base, &body).await.json().await.unwrap();
    assert_eq!(r.image, same.image);
}

#[tokio::test(flavor = "multi_thread")]
async fn resets_are_fresh_and_in_frame() {
    let base = live().await;
    let client = reqwest::Client::new();
    let bound = 1.0 + 2.0 / 31.0;
    let mut seeds = std::collections::HashSet::new();
    for _ in 0..100 {
        let r: ResetResponse = client.post(format!("{base}/reset")).send().await.unwrap().json().await.unwrap();
        assert!(seeds.insert(r.seed), "seed {} repeated", r.seed);
        assert!(r.seed < 1 << 53);
        assert_eq!(r.centers.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 2, 4]);
        let c = r.centers[0][0];
        assert!(c.y >= -1.0 && c.y < bound && c.x >= -1.0 && c.x < bound, "{c:?}");
        // a reset response is a valid generate request
        let body = json!({"seed": r.seed, "centers": r.centers});
        assert_eq!(generate(&base, &body).await.status(), 200);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn routes_answer_503_until_the_model_is_loaded() {
    let state = AppState::empty(None);
    let base = start(state.clone()).await;
    let client = reqwest::Client::new();
    assert_eq!(reqwest::get(format!("{base}/model/info")).await.unwrap().status(), 503);
    assert_eq!(generate(&base, &request(1, false)).await.status(), 503);
    assert_eq!(client.post(format!("{base}/reset")).send().await.unwrap().status(), 503);
    state.install(Model::load(checkpoint()).unwrap());
    assert_eq!(reqwest::get(format!("{base}/model/info")).await.unwrap().status(), 200);
}

#[tokio::test(flavor = "multi_thread")]
async fn cors_preflight_is_answered() {
    let base = live().await;
    let resp = reqwest::Client::new()
        .request(reqwest::Method::OPTIONS, format!("{base}/generate"))
        .header("Origin", "http://localhost:5173")
        .header("Access-Control-Request-Method", "POST")
        .header("Access-Control-Request-Headers", "content-type")
        .send()
        .await
        .unwrap();
    assert!(resp.status().is_success());
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}

#[tokio::test(flavor = "multi_thread")]
async fn serve_loads_the_checkpoint_and_reports_its_address() {
    let (tx, rx) = tokio::sync::oneshot::channel::<SocketAddr>();
    let opts = ServeOptions {
        checkpoint: checkpoint().to_path_buf(),
        addr: "127.0.0.1:0".parse().unwrap(),
        origins: vec!["http://localhost:5173".into()],
        reset_seed: None,
    };
    tokio::spawn(async move { serve(opts, |a| tx.send(a).unwrap()).await });
    let addr = rx.await.unwrap();
    let mut status = 0;
    for _ in 0..100 {
        status = reqwest::get(format!("http://{addr}/model/info")).await.unwrap().status().as_u16();
        if status == 200 {
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    }
    assert_eq!(status, 200);

    let missing = ServeOptions {
        checkpoint: PathBuf::from("/nonexistent/model.bin"),
        addr: "127.0.0.1:0".parse().unwrap(),
        origins: vec![],
        reset_seed: None,
    };
    assert!(serve(missing, |_| {}).await.is_err());
}

fn golden() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../golden/heatmap_bumps.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn center(v: &Value) -> Coord2D {
    Coord2D::normalized(v["y"].as_f64().unwrap(), v["x"].as_f64().unwrap())
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn bump_renderer_matches_the_golden_vectors() {
    let g = golden();
    let tol = g["tolerance"].as_f64().unwrap();
    assert!(tol <= 1e-6);
    let cases = g["bumps"].as_array().unwrap();
    assert!(!cases.is_empty());
    for case in cases {
        let res = case["res"].as_u64().unwrap() as usize;
        let got = gaussian_bump(res, center(&case["center"]), case["variance"].as_f64().unwrap()).unwrap();
        let want = floats(&case["values"]);
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= tol, "res {res}: {a} vs {b}");
        }
    }
}

#[test]
fn level_previews_match_the_golden_vectors() {
    let g = golden();
    let tol = g["tolerance"].as_f64().unwrap();
    let levels = g["pyramid"].as_array().unwrap();
    let centers: Vec<Vec<Coord2D>> =
        levels.iter().map(|l| l["centers"].as_array().unwrap().iter().map(center).collect()).collect();
    let p = HeatmapPyramid::from_centers(32, g["var0"].as_f64().unwrap(), centers).unwrap();
    for (level, want) in p.levels.iter().zip(levels) {
        assert_eq!(level.resolution as u64, want["res"].as_u64().unwrap());
        assert!((level.variance - want["variance"].as_f64().unwrap()).abs() <= 1e-15);
        let got: Vec<f64> = level_sum(level).iter().map(|v| v.clamp(0.0, 1.0)).collect();
        for (a, b) in got.iter().zip(floats(&want["preview"])) {
            assert!((a - b).abs() <= tol);
        }
    }
}
