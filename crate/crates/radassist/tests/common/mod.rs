#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};
use std::sync::Arc;
use std::time::Duration;

use radassist::service::{self, AppState};
use radassist::store::Store;
use radassist_core::imaging::{write_nifti_mask, write_nifti_volume, Dtype};
use radassist_core::{Backend, LabelMask, Modality, VoxelVolume};
use serde_json::Value;

pub const REFERENCE_PROMPT: &str = "Left kidney volume: 170 cm3, Right kidney volume: 179 cm3, the volume ratio is 0.95";
pub const NORMAL_SENTENCE: &str = "The kidneys have a normal appearance.";
pub const NORMAL_TOKENS: [&str; 7] = ["The", " kidneys", " have", " a", " normal", " appearance", "."];

pub const DIMS: [usize; 3] = [60, 40, 30];
/// 2 × 2 × 2.5 mm: exactly 10 mm³ per voxel.
pub const SPACING: [f64; 3] = [2.0, 2.0, 2.5];

pub fn label_table() -> BTreeMap<u32, String> {
    [(1, "kidney_left"), (2, "kidney_right")]
        .into_iter()
        .map(|(k, v)| (k, v.to_owned()))
        .collect()
}

/// Two box-ish kidneys of exactly `left` and `right` voxels (10 mm³ each),
/// left in x 2..28 and right in x 32..58.
pub fn kidney_study(left: usize, right: usize) -> (VoxelVolume, LabelMask) {
    let n = DIMS[0] * DIMS[1] * DIMS[2];
    let mut labels = vec![0u32; n];
    for (label, x0, count) in [(1u32, 2usize, left), (2, 32, right)] {
        let mut placed = 0;
        'fill: for z in 0..DIMS[2] {
            for y in 0..DIMS[1] {
                for x in x0..x0 + 26 {
                    if placed == count {
                        break 'fill;
                    }
                    labels[x + DIMS[0] * (y + DIMS[1] * z)] = label;
                    placed += 1;
                }
            }
        }
        assert_eq!(placed, count, "region too small");
    }
    let data = labels.iter().map(|&l| if l == 0 { -100.0 } else { 30.0 }).collect();
    let volume = VoxelVolume::new(DIMS, SPACING, Modality::CT, data).unwrap();
    let mask = LabelMask::new(DIMS, SPACING, labels, label_table()).unwrap();
    (volume, mask)
}

/// Reference case: 170 cm³ left, 179 cm³ right.
pub fn reference_study() -> (VoxelVolume, LabelMask) {
    kidney_study(17_000, 17_900)
}

pub fn nifti_pair(volume: &VoxelVolume, mask: &LabelMask) -> (Vec<u8>, Vec<u8>) {
    (
        write_nifti_volume(volume, Dtype::I16).unwrap(),
        write_nifti_mask(mask, Dtype::U8).unwrap(),
    )
}

pub fn descriptor() -> Vec<u8> {
    serde_json::to_vec(&serde_json::json!({
        "modality": "CT",
        "body_region": "abdomen",
        "hint_keywords": ["kidney"],
        "labels": {"1": "kidney_left", "2": "kidney_right"},
    }))
    .unwrap()
}

const BOUNDARY: &str = "radassist-test-boundary-7c1f";

/// `(field, bytes)` pairs as multipart/form-data.
pub fn multipart(parts: &[(&str, &[u8])]) -> (String, Vec<u8>) {
    let mut body = Vec::new();
    for (name, bytes) in parts {
        body.extend_from_slice(
            format!(
                "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}.bin\"\r\nContent-Type: application/octet-stream\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={BOUNDARY}"), body)
}

pub struct Http {
    pub base: String,
    agent: ureq::Agent,
}

impl Http {
    pub fn new(base: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(20)))
            .build()
            .into();
        Self {
            base: base.to_owned(),
            agent,
        }
    }

    fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> (u16, Value) {
        let mut resp = resp.expect("request reaches the server");
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        Self::finish(self.agent.get(format!("{}{path}", self.base)).call())
    }

    pub fn post(&self, path: &str, body: Value) -> (u16, Value) {
        Self::finish(self.agent.post(format!("{}{path}", self.base)).send_json(body))
    }

    pub fn post_empty(&self, path: &str) -> (u16, Value) {
        Self::finish(self.agent.post(format!("{}{path}", self.base)).send_empty())
    }

    pub fn upload(&self, parts: &[(&str, &[u8])]) -> (u16, Value) {
        let (ct, body) = multipart(parts);
        Self::finish(
            self.agent
                .post(format!("{}/studies", self.base))
                .header("Content-Type", &ct)
                .send(&body[..]),
        )
    }

    /// Uploads the study, analyzes both kidneys and opens a kidney session.
    pub fn kidney_session(&self) -> (String, String) {
        let (v, m) = reference_study();
        let (image, mask) = nifti_pair(&v, &m);
        let (status, body) = self.upload(&[("image", &image), ("mask", &mask), ("descriptor", &descriptor())]);
        assert_eq!(status, 201, "{body}");
        let study = body["study_id"].as_str().unwrap().to_owned();
        let (status, body) = self.post(
            &format!("/studies/{study}/analyze"),
            serde_json::json!({"organs": ["kidney_left", "kidney_right"]}),
        );
        assert_eq!(status, 200, "{body}");
        let (status, body) = self.post("/sessions", serde_json::json!({"study_id": study, "organ": "kidney"}));
        assert_eq!(status, 201, "{body}");
        (study, body["session_id"].as_str().unwrap().to_owned())
    }

    pub fn open_stream(&self, path: &str) -> SseStream {
        let resp = self
            .agent
            .get(format!("{}{path}", self.base))
            .call()
            .expect("request reaches the server");
        let status = resp.status().as_u16();
        SseStream {
            status,
            reader: BufReader::new(Box::new(resp.into_body().into_reader())),
        }
    }

    /// Reads a whole suggestion stream.
    pub fn suggestion(&self, session: &str) -> (u16, Vec<(String, Value)>) {
        let mut s = self.open_stream(&format!("/sessions/{session}/suggestion"));
        let status = s.status;
        let mut events = Vec::new();
        if status == 200 {
            while let Some(e) = s.next_event() {
                events.push(e);
            }
        }
        (status, events)
    }
}

pub struct SseStream {
    pub status: u16,
    reader: BufReader<Box<dyn Read + Send>>,
}

impl SseStream {
    /// Next `(event, data)`; keep-alive comments are skipped. `None` at EOF.
    pub fn next_event(&mut self) -> Option<(String, Value)> {
        let (mut name, mut data) = (String::from("message"), String::new());
        let mut line = String::new();
        loop {
            line.clear();
            if self.reader.read_line(&mut line).ok()? == 0 {
                return None;
            }
            let l = line.trim_end_matches(['\r', '\n']);
            if l.is_empty() {
                if data.is_empty() {
                    continue;
                }
                return Some((name, serde_json::from_str(&data).unwrap_or(Value::String(data))));
            }
            if let Some(v) = l.strip_prefix("event:") {
                name = v.trim().to_owned();
            } else if let Some(v) = l.strip_prefix("data:") {
                data.push_str(v.strip_prefix(' ').unwrap_or(v));
            }
        }
    }
}

/// Service running on a private tokio runtime; dropped means stopped.
pub struct TestServer {
    pub http: Http,
    pub data_dir: PathBuf,
    runtime: Option<tokio::runtime::Runtime>,
}

impl TestServer {
    pub fn start(data_dir: &Path, backend: Arc<dyn Backend>) -> Self {
        let runtime = tokio::runtime::Runtime::new().unwrap();
        let state = AppState::new(Store::open(data_dir).unwrap(), backend, 64);
        let listener = runtime
            .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
            .unwrap();
        let addr = listener.local_addr().unwrap();
        runtime.spawn(service::run(listener, state));
        Self {
            http: Http::new(&format!("http://{addr}")),
            data_dir: data_dir.to_owned(),
            runtime: Some(runtime),
        }
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_radassist")
}

/// `radassist serve` as a child process, with its announced base URL.
pub struct ServeProcess {
    pub child: Child,
    pub base: String,
    _stdout: BufReader<ChildStdout>,
}

pub fn write_config(dir: &Path, extra_backend: Value) -> PathBuf {
    let mut backend = serde_json::json!({"kind": "rule"});
    if let (Some(b), Some(extra)) = (backend.as_object_mut(), extra_backend.as_object()) {
        b.extend(extra.clone());
    }
    let config = serde_json::json!({
        "server": {"host": "127.0.0.1", "port": 0},
        "data_dir": dir.join("data"),
        "backend": backend,
        "suggestion": {"max_tokens_default": 64},
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    path
}

impl ServeProcess {
    pub fn spawn(config: &Path) -> Self {
        let mut child = Command::new(bin())
            .args(["serve", "--config"])
            .arg(config)
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .unwrap();
        let mut stdout = BufReader::new(child.stdout.take().unwrap());
        let mut line = String::new();
        stdout.read_line(&mut line).unwrap();
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_owned();
        Self {
            child,
            base,
            _stdout: stdout,
        }
    }

    /// SIGKILL, no chance to flush anything.
    pub fn kill9(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for ServeProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn token_texts(events: &[(String, Value)]) -> Vec<String> {
    events
        .iter()
        .filter(|(n, _)| n == "token")
        .map(|(_, d)| d["text"].as_str().unwrap().to_owned())
        .collect()
}
