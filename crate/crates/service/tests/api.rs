mod common;

use std::time::Duration;

use femseg_core::dicom::read_series_dir;
use femseg_core::phantom::PhantomSpec;
use femseg_core::pipeline::{parse_pipeline_spec, run_pipeline, Cache};
use femseg_service::api::display_slice;
use femseg_service::export::DelineationSet;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

use common::{start, three_slice_series, zip_dir};

async fn upload(client: &Client, base: &str, zip: Vec<u8>) -> (StatusCode, Value) {
    let r = client
        .post(format!("{base}/series"))
        .header("content-type", "application/zip")
        .body(zip)
        .send()
        .await
        .unwrap();
    (r.status(), r.json().await.unwrap())
}

async fn post_json(client: &Client, url: String, body: Value) -> (StatusCode, Value) {
    let r = client.post(url).json(&body).send().await.unwrap();
    (r.status(), r.json().await.unwrap())
}

fn assert_error_body(v: &Value, code: &str) {
    assert_eq!(v["v"], 1);
    assert_eq!(v["code"], code, "{v}");
    assert!(v["message"].is_string());
    assert!(v.get("detail").is_some());
}

#[tokio::test(flavor = "multi_thread")]
async fn upload_slices_and_involution() {
    let data = tempfile::tempdir().unwrap();
    three_slice_series(data.path());
    let store = tempfile::tempdir().unwrap();
    let srv = start(store.path()).await;
    let client = Client::new();

    let (status, info) = upload(&client, &srv.base, zip_dir(data.path())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(info["slices"], 3);
    assert_eq!(info["dims"], json!([48, 40]));
    let sid = info["session"].as_str().unwrap().to_string();

    // same series again: same session, not created
    let (status, again) = upload(&client, &srv.base, zip_dir(data.path())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again["session"], sid.as_str());

    let r = client.get(format!("{}/series/{sid}/slices/99.png", srv.base)).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    assert_error_body(&r.json().await.unwrap(), "NotFound");

    let r = client
        .get(format!("{}/series/{sid}/slices/1.png?w=1500&l=300", srv.base))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.headers()["content-type"], "image/png");
    assert!(r.bytes().await.unwrap().starts_with(b"\x89PNG"));

    let run = json!({
        "pipeline": { "name": "inv2", "stages": [{ "op": "invert" }, { "op": "invert" }] },
        "slice": 1,
        "window": { "w": 400, "l": 40 },
    });
    let (status, out) = post_json(&client, format!("{}/series/{sid}/run", srv.base), run.clone()).await;
    assert_eq!(status, StatusCode::OK, "{out}");
    assert_eq!(out["v"], 1);
    assert_eq!(out["output_digest"], out["input_digest"]);
    assert_eq!(out["executed"], 2);

    // the input digest is that of the windowed slice
    let volume = read_series_dir(data.path()).unwrap();
    let windowed = display_slice(volume.hu(1), 400.0, 40.0).unwrap();
    assert_eq!(out["input_digest"], windowed.digest().as_str());

    let (_, rerun) = post_json(&client, format!("{}/series/{sid}/run", srv.base), run).await;
    assert_eq!(rerun["executed"], 0);
    assert!(rerun["stages"].as_array().unwrap().iter().all(|s| s["cache_hit"] == true));

    for st in out["stages"].as_array().unwrap() {
        let r = client
            .get(format!("{}{}", srv.base, st["preview"].as_str().unwrap()))
            .send()
            .await
            .unwrap();
        assert_eq!(r.status(), StatusCode::OK);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn multipart_upload_and_parser_errors() {
    let data = tempfile::tempdir().unwrap();
    three_slice_series(data.path());
    let store = tempfile::tempdir().unwrap();
    let srv = start(store.path()).await;
    let client = Client::new();

    let mut form = reqwest::multipart::Form::new();
    let mut paths: Vec<_> = std::fs::read_dir(data.path())
        .unwrap()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "dcm"))
        .collect();
    paths.sort();
    for p in &paths {
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        form = form.part("file", reqwest::multipart::Part::bytes(std::fs::read(p).unwrap()).file_name(name));
    }
    let r = client.post(format!("{}/series", srv.base)).multipart(form).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["slices"], 3);

    // a truncated file inside the archive surfaces the parser's error name
    let bad = tempfile::tempdir().unwrap();
    for (i, p) in paths.iter().enumerate() {
        let mut b = std::fs::read(p).unwrap();
        if i == 1 {
            b.truncate(b.len() - 100);
        }
        std::fs::write(bad.path().join(p.file_name().unwrap()), b).unwrap();
    }
    let (status, body) = upload(&client, &srv.base, zip_dir(bad.path())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error_body(&body, "TruncatedFile");

    let one = tempfile::tempdir().unwrap();
    std::fs::copy(&paths[0], one.path().join("a.dcm")).unwrap();
    let (status, body) = upload(&client, &srv.base, zip_dir(one.path())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error_body(&body, "TooFewSlices");

    let r = client.post(format!("{}/series", srv.base)).body("hello").send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNSUPPORTED_MEDIA_TYPE);
    assert_error_body(&r.json().await.unwrap(), "BadUpload");

    let r = client.get(format!("{}/series/0000000000000000", srv.base)).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn pipelines_validate_and_previews_match_prefixes() {
    let data = tempfile::tempdir().unwrap();
    three_slice_series(data.path());
    let store = tempfile::tempdir().unwrap();
    let srv = start(store.path()).await;
    let client = Client::new();
    let (_, info) = upload(&client, &srv.base, zip_dir(data.path())).await;
    let sid = info["session"].as_str().unwrap().to_string();
    let url = |p: &str| format!("{}/series/{sid}{p}", srv.base);

    let (status, body) = post_json(
        &client,
        url("/pipelines"),
        json!({ "name": "bad", "stages": [{ "op": "invert" }, { "op": "frobnicate" }] }),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error_body(&body, "UnknownOp");
    assert_eq!(body["detail"]["stage"], 1);

    let (status, body) = post_json(
        &client,
        url("/pipelines"),
        json!({ "name": "bad", "stages": [{ "op": "thresh_simple", "params": { "t": "high" } }] }),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error_body(&body, "BadParamSchema");
    assert_eq!(body["detail"]["stage"], 0);

    let spec_text = r#"{"name":"bone","stages":[
        {"op":"window","params":{"width":1500,"level":300}},
        {"op":"aniso","params":{"iterations":2}},
        {"op":"thresh_otsu"},
        {"op":"close","params":{"shape":"ellipse"}},
        {"op":"invert","enabled":false},
        {"op":"cc"}]}"#;
    let (status, body) = post_json(&client, url("/pipelines"), serde_json::from_str(spec_text).unwrap()).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["name"], "bone");

    let r = client.get(url("/pipelines/bone")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);

    let (status, out) = post_json(&client, url("/run"), json!({ "pipeline": "bone", "slice": 2 })).await;
    assert_eq!(status, StatusCode::OK, "{out}");
    let stages = out["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 5, "disabled stage skipped");

    // previews equal the prefix-spec outputs computed directly
    let spec = parse_pipeline_spec(spec_text).unwrap();
    let volume = read_series_dir(data.path()).unwrap();
    let local = run_pipeline(&spec, volume.hu(2), &Cache::memory(1 << 24)).unwrap();
    for (st, img) in stages.iter().zip(&local.intermediates) {
        assert_eq!(st["digest"], img.digest().as_str());
    }

    // point ops refuse raw HU: failure names the stage
    let (status, body) = post_json(
        &client,
        url("/run"),
        json!({ "pipeline": { "name": "x", "stages": [{ "op": "gamma" }] }, "slice": 0 }),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error_body(&body, "StageFailure");
    assert_eq!(body["detail"]["stage"], 0);
    assert_eq!(body["detail"]["error"], "BadParam");

    let (status, _) = post_json(&client, url("/run"), json!({ "pipeline": "nope", "slice": 0 })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = post_json(&client, url("/run"), json!({ "pipeline": "bone", "slice": 3 })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

async fn wait_for_job(client: &Client, base: &str, jid: &str) -> Value {
    let mut states = Vec::new();
    for _ in 0..600 {
        let v: Value = client.get(format!("{base}/jobs/{jid}")).send().await.unwrap().json().await.unwrap();
        let s = v["state"].as_str().unwrap().to_string();
        if states.last() != Some(&s) {
            states.push(s.clone());
        }
        if s == "done" || s == "failed" {
            let order = ["queued", "running", "done", "failed"];
            let pos: Vec<usize> = states.iter().map(|s| order.iter().position(|o| o == s).unwrap()).collect();
            assert!(pos.windows(2).all(|w| w[0] < w[1]), "states went {states:?}");
            return v;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {jid} did not finish");
}

fn phantom_zip() -> (tempfile::TempDir, Vec<u8>, PhantomSpec) {
    let dir = tempfile::tempdir().unwrap();
    let spec = PhantomSpec::default();
    spec.write_dir(dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("truth.json")).unwrap();
    let zip = zip_dir(dir.path());
    (dir, zip, spec)
}

#[tokio::test(flavor = "multi_thread")]
async fn delineation_jobs_compare_and_restart() {
    let (data, zip, spec) = phantom_zip();
    let store = tempfile::tempdir().unwrap();
    let srv = start(store.path()).await;
    let client = Client::new();
    let (status, info) = upload(&client, &srv.base, zip).await;
    assert_eq!(status, StatusCode::CREATED);
    let sid = info["session"].as_str().unwrap().to_string();
    let url = |p: &str| format!("{}/series/{sid}{p}", srv.base);

    let (status, body) = post_json(&client, url("/delineate"), json!({ "params": { "head_r_range": [30, 10] } })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    let (status, body) = post_json(&client, url("/delineate"), json!({ "params": { "nonsense": 1 } })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");

    // two jobs on one session: the second queues behind the first
    let (status, a) = post_json(&client, url("/delineate"), json!({ "params": { "side": "left" } })).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let (_, b) = post_json(&client, url("/delineate"), json!({})).await;
    let ja = wait_for_job(&client, &srv.base, a["job"].as_str().unwrap()).await;
    let jb = wait_for_job(&client, &srv.base, b["job"].as_str().unwrap()).await;
    assert_eq!(ja["state"], "done", "{ja}");
    assert_eq!(jb["state"], "done", "{jb}");

    let result = ja["result"].as_str().unwrap();
    let stored: Value = client.get(format!("{}{result}", srv.base)).send().await.unwrap().json().await.unwrap();
    let auto: DelineationSet = serde_json::from_value(json!({ "v": 1, "delineations": stored["delineations"] })).unwrap();
    assert_eq!(auto.delineations.len(), 1);
    let d = &auto.delineations[0];
    assert!(d.range.start.abs_diff(14) <= 1 && d.range.stop.abs_diff(50) <= 1, "{:?}", d.range);

    let jid = ja["id"].as_str().unwrap();
    let r = client.get(url(&format!("/delineation/{jid}/overlays/40.png"))).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert!(r.bytes().await.unwrap().starts_with(b"\x89PNG"));
    let r = client.get(url(&format!("/delineation/{jid}/overlays/600.png"))).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);

    // import the ground truth as the manual delineation, then compare blind
    let volume = read_series_dir(data.path()).unwrap();
    let truth = DelineationSet::new(spec.truth_delineations(&volume));
    let manual_set = json!({ "v": 1, "delineations": [truth.side(femseg_core::femur::Side::Left).unwrap()] });
    let (status, imported) = post_json(&client, url("/delineation"), manual_set).await;
    assert_eq!(status, StatusCode::CREATED, "{imported}");
    let mid = imported["id"].as_str().unwrap();

    let mut firsts = std::collections::HashSet::new();
    for _ in 0..16 {
        let req = json!({
            "left": { "session": sid, "delineation": jid },
            "right": { "session": sid, "delineation": mid },
            "shuffle": true,
        });
        let r = client.post(format!("{}/compare", srv.base)).json(&req).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::OK);
        let text = r.text().await.unwrap();
        for marker in ["manual", "automatic", jid, mid] {
            assert!(!text.contains(marker), "descriptor leaks {marker}: {text}");
        }
        let pair: Value = serde_json::from_str(&text).unwrap();
        for member in ["first", "second"] {
            let body = client
                .get(format!("{}{}", srv.base, pair[member].as_str().unwrap()))
                .send()
                .await
                .unwrap()
                .text()
                .await
                .unwrap();
            assert!(!body.contains("manual") && !body.contains("automatic"));
        }
        let reveal: Value = client
            .get(format!("{}/compare/{}/reveal", srv.base, pair["pair"].as_str().unwrap()))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        firsts.insert(reveal["first"]["source"].as_str().unwrap().to_string());
    }
    assert_eq!(firsts.len(), 2, "shuffle never swapped in 16 tries");

    // restart over the same store: identical answers
    let before: Value = post_json(
        &client,
        url("/run"),
        json!({ "pipeline": { "name": "w", "stages": [{ "op": "window" }, { "op": "hist_eq" }] }, "slice": 40 }),
    )
    .await
    .1;
    srv.handle.abort();
    let srv2 = start(store.path()).await;
    let url2 = |p: &str| format!("{}/series/{sid}{p}", srv2.base);
    let (status, after) = post_json(
        &client,
        url2("/run"),
        json!({ "pipeline": { "name": "w", "stages": [{ "op": "window" }, { "op": "hist_eq" }] }, "slice": 40 }),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before["output_digest"], after["output_digest"]);
    assert_eq!(after["executed"], 0, "disk cache survives the restart");
    let job: Value = client.get(format!("{}/jobs/{jid}", srv2.base)).send().await.unwrap().json().await.unwrap();
    assert_eq!(job["state"], "done");
    let again: Value = client.get(format!("{}{result}", srv2.base)).send().await.unwrap().json().await.unwrap();
    assert_eq!(again, stored);
}
