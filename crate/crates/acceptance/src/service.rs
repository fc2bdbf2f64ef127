//! Service contract against a live server holding a blob checkpoint:
//! deterministic `/generate`, field-level 400s and in-frame `/reset`
//! centers that the service accepts back.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use edit_service::api::{ErrorBody, GenerateResponse, ModelInfo, ResetResponse, MAX_RESET_SEED};
use edit_service::{serve, ServeOptions};
use eqgan::config::TrainConfig;
use eqgan::data::center_of_mass;
use eqgan::trainer::TrainState;
use serde_json::{json, Value};

use crate::Workspace;

fn request(seed: u64, dx: f64) -> Value {
    let c = |y: f64, x: f64| json!({"y": y, "x": x + dx});
    json!({
        "seed": seed,
        "centers": [
            [c(0.1, -0.4)],
            [c(0.3, -0.5), c(-0.1, -0.2)],
            [c(0.0, -0.3), c(0.4, -0.6), c(-0.3, -0.2), c(0.2, -0.5)],
        ],
    })
}

/// Blob centroid `(y, x)` of a base64 grayscale PNG.
fn centroid(b64: &str) -> Result<(f64, f64)> {
    let png = image::load_from_memory(&BASE64.decode(b64)?)?.to_luma8();
    let res = png.width() as usize;
    let values: Vec<f64> = png.pixels().map(|p| p[0] as f64).collect();
    center_of_mass(&values, res).context("flat image")
}

fn fallback_checkpoint(dir: &Path) -> Result<PathBuf> {
    let mut state = TrainState::new(TrainConfig::from_toml_str("", &["batch_size=4".to_string()])?)?;
    for _ in 0..5 {
        state.train_step()?;
    }
    let path = dir.join("service_blob.bin");
    std::fs::create_dir_all(dir)?;
    state.save(&path)?;
    Ok(path)
}

pub fn check(ws: &Workspace) -> Result<String> {
    let (checkpoint, trained) = match ws.blob_checkpoint() {
        Some(p) => (p, true),
        None => (fallback_checkpoint(&ws.dir)?, false),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(contract(checkpoint, trained))
}

async fn contract(checkpoint: PathBuf, trained: bool) -> Result<String> {
    let (tx, rx) = tokio::sync::oneshot::channel();
    let opts = ServeOptions {
        checkpoint: checkpoint.clone(),
        addr: "127.0.0.1:0".parse()?,
        origins: Vec::new(),
        reset_seed: Some(2024),
    };
    let server = tokio::spawn(serve(opts, move |addr| {
        let _ = tx.send(addr);
    }));
    let base = format!("http://{}", rx.await.context("server never bound")?);
    let client = reqwest::Client::new();

    let mut info = None;
    for _ in 0..600 {
        let r = client.get(format!("{base}/model/info")).send().await?;
        match r.status().as_u16() {
            200 => {
                info = Some(r.json::<ModelInfo>().await?);
                break;
            }
            503 => tokio::time::sleep(std::time::Duration::from_millis(50)).await,
            s => bail!("/model/info answered {s}"),
        }
    }
    let info = info.context("model did not load within 30 s")?;
    ensure!(info.counts == vec![1, 2, 4] && info.base_res == 32, "unexpected model info {info:?}");

    let generate = |body: Value| {
        let client = client.clone();
        let url = format!("{base}/generate");
        async move { client.post(url).json(&body).send().await }
    };

    // deterministic /generate
    let first = generate(request(7, 0.0)).await?.text().await?;
    let again = generate(request(7, 0.0)).await?.text().await?;
    ensure!(first == again, "identical requests gave different responses");
    let a: GenerateResponse = serde_json::from_str(&first)?;
    let other: GenerateResponse = generate(request(8, 0.0)).await?.json().await?;
    ensure!(a.image != other.image, "different seeds gave the same image");
    let mut overlays = request(7, 0.0);
    overlays["include_overlays"] = json!(true);
    let with: GenerateResponse = generate(overlays).await?.json().await?;
    ensure!(with.image == a.image && with.attn.as_ref().map(Vec::len) == Some(3), "overlays changed the image or are missing");

    // validation 400s naming the field
    let mut bad_count = request(1, 0.0);
    bad_count["centers"][1] = json!([{"y": 0.0, "x": 0.0}]);
    let mut bad_coord = request(1, 0.0);
    bad_coord["centers"][2][3] = json!({"y": "up", "x": 0.0});
    let cases = [
        (json!({"centers": request(1, 0.0)["centers"]}), "seed"),
        (json!({"seed": -3, "centers": request(1, 0.0)["centers"]}), "seed"),
        (json!({"seed": 1}), "centers"),
        (bad_count, "centers[1]"),
        (bad_coord, "centers[2][3].y"),
        (json!({"seed": 1, "centers": [], "style": 2}), "style"),
        (json!({"seed": 1, "centers": [], "include_overlays": "yes"}), "include_overlays"),
    ];
    for (body, field) in cases {
        let r = generate(body.clone()).await?;
        ensure!(r.status() == 400, "{body} answered {}", r.status());
        let err: ErrorBody = r.json().await?;
        ensure!(err.field.as_deref() == Some(field), "{body}: field {:?} instead of {field}", err.field);
    }
    let r = client.post(format!("{base}/generate")).body("{not json").send().await?;
    ensure!(r.status() == 400, "malformed JSON answered {}", r.status());

    // /reset: distinct seeds, level-0 centers in frame, accepted back
    let bound = 1.0 + 2.0 / (info.base_res as f64 - 1.0);
    let mut seeds = HashSet::new();
    for i in 0..100 {
        let r: ResetResponse = client.post(format!("{base}/reset")).send().await?.json().await?;
        let c = r.centers[0][0];
        ensure!(c.y >= -1.0 && c.y < bound && c.x >= -1.0 && c.x < bound, "reset center {c:?} out of frame");
        ensure!(r.centers.iter().map(Vec::len).collect::<Vec<_>>() == vec![1, 2, 4], "reset counts");
        if i < 5 {
            let body = json!({"seed": r.seed, "centers": r.centers});
            let status = generate(body).await?.status();
            ensure!(status == 200, "/generate rejected a /reset answer with {status}");
        }
        ensure!(r.seed <= MAX_RESET_SEED, "reset seed {} not exact as a JavaScript number", r.seed);
        seeds.insert(r.seed);
    }
    ensure!(seeds.len() == 100, "only {} distinct seeds in 100 resets", seeds.len());

    // moving every center right should move the blob right
    let mut edit = String::new();
    if trained {
        let mut moved = 0;
        for seed in 0..8 {
            let left: GenerateResponse = generate(request(seed, 0.0)).await?.json().await?;
            let right: GenerateResponse = generate(request(seed, 0.8)).await?.json().await?;
            moved += (centroid(&right.image)?.1 > centroid(&left.image)?.1) as usize;
        }
        edit = format!("; dragging centers right moved the blob right for {moved}/8 seeds");
    }
    server.abort();
    Ok(format!(
        "{} checkpoint {}: /generate deterministic, 8 invalid bodies rejected with 400, 100 distinct in-frame resets{edit}",
        if trained { "trained" } else { "5-step" },
        checkpoint.display()
    ))
}
