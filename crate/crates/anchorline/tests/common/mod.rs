#![allow(dead_code)]

use std::path::Path;

use anchorline::config::ApiConfig;
use anchorline::server::{spawn, RunningServer};
use anchorline_core::anchor_sim::RelocModel;
use anchorline_core::fixtures::inspection_scenario;
use anchorline_core::mission::MissionStore;
use futures::StreamExt;
use serde_json::Value;

/// Writes the fixture scenario under `dir` and returns a config for it.
pub fn fixture_config(dir: &Path, seed: u64) -> ApiConfig {
    let mut s = inspection_scenario(seed);
    let missions = dir.join("missions");
    MissionStore::open(&missions).unwrap().save(&s.mission).unwrap();
    s.anchors.save_to(dir.join("anchors.json")).unwrap();
    std::fs::write(dir.join("grid.json"), s.grid.to_json()).unwrap();
    let mut cfg = ApiConfig::new(missions, dir.join("anchors.json"), dir.join("grid.json"));
    cfg.port = 0;
    cfg.tick_interval_ms = 1;
    cfg.reloc = RelocModel::noiseless();
    cfg.robot_start = s.robot_start;
    cfg
}

pub async fn start(cfg: &ApiConfig) -> (RunningServer, String) {
    let server = spawn(cfg).await.unwrap();
    let base = format!("http://{}", server.addr);
    (server, base)
}

/// Reads NDJSON events until `stop` returns true or the stream ends.
pub async fn read_events(resp: reqwest::Response, mut stop: impl FnMut(&Value) -> bool) -> Vec<Value> {
    let mut out = Vec::new();
    let mut buf = Vec::<u8>::new();
    let mut body = resp.bytes_stream();
    while let Some(chunk) = body.next().await {
        buf.extend_from_slice(&chunk.unwrap());
        while let Some(pos) = buf.iter().position(|b| *b == b'\n') {
            let line: Vec<u8> = buf.drain(..=pos).collect();
            let v: Value = serde_json::from_slice(&line).unwrap();
            let done = stop(&v);
            out.push(v);
            if done {
                return out;
            }
        }
    }
    assert!(buf.is_empty(), "partial line at end of stream");
    out
}

pub fn status(event: &Value) -> Option<&str> {
    (event["kind"] == "StateChanged").then(|| event["state"]["status"].as_str().unwrap())
}
