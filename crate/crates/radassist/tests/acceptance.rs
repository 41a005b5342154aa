//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! fails. Runs without the test harness so the lines always reach stdout.

mod common;
#[path = "../../core/tests/support/mod.rs"]
mod oracle;

use std::ops::ControlFlow;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use radassist::mock::{MockChatServer, MockReply};
use radassist::paced::Paced;
use radassist::remote::{RemoteBackend, RemoteConfig};
use radassist_core::completion::StreamEnd;
use radassist_core::corpus::{split, SplitSpec};
use radassist_core::imaging::{LabelMask, Modality, VoxelVolume};
use radassist_core::metrics::{bleu, lcs_len, rouge_l};
use radassist_core::promptgen::render_prompt;
use radassist_core::radiomics::{compute_features, compute_organ, paired_ratio};
use radassist_core::{Backend, BackendError, BackendParams, RuleBackend};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn timed(limit: Duration, f: impl FnOnce() -> Check) -> Check {
    let start = Instant::now();
    let detail = f()?;
    let took = start.elapsed();
    ensure!(took < limit, "{detail}; took {took:.2?}, limit {limit:?}");
    Ok(format!("{detail}; {took:.2?}"))
}

fn prompt_fidelity() -> Check {
    let (v, m) = reference_study();
    let left = compute_organ(&v, &m, "kidney_left").map_err(|e| e.to_string())?;
    let right = compute_organ(&v, &m, "kidney_right").map_err(|e| e.to_string())?;
    let ratio = paired_ratio(&left, &right).map_err(|e| e.to_string())?;
    let features = [left, right];
    let start = Instant::now();
    let prompt = render_prompt(&features, Some(&ratio), "kidney", "").map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure!(prompt.rendered == REFERENCE_PROMPT, "rendered {:?}", prompt.rendered);
    ensure!(took < Duration::from_millis(1), "render took {took:?}");
    Ok(format!("byte-exact; render {took:?}"))
}

const SPACINGS: [f64; 5] = [0.5, 0.75, 1.0, 1.25, 2.0];

fn random_case(rng: &mut ChaCha8Rng) -> (LabelMask, VoxelVolume) {
    let dims = [rng.gen_range(1..=16), rng.gen_range(1..=16), rng.gen_range(1..=16)];
    let spacing = [0; 3].map(|_| SPACINGS[rng.gen_range(0..SPACINGS.len())]);
    let n = dims[0] * dims[1] * dims[2];
    let labels = (0..n)
        .map(|_| match rng.gen_range(0..8) {
            0..=2 => 0,
            3..=6 => 1,
            _ => 2,
        })
        .collect();
    let data = (0..n).map(|_| rng.gen_range(-1100..1200) as f32).collect();
    (
        LabelMask::new(dims, spacing, labels, oracle::kidney_table()).unwrap(),
        VoxelVolume::new(dims, spacing, Modality::CT, data).unwrap(),
    )
}

fn shifted(mask: &LabelMask, vol: &VoxelVolume, offset: [usize; 3], scale: f64) -> (LabelMask, VoxelVolume) {
    let d = mask.dims();
    let big = [d[0] + offset[0] + 1, d[1] + offset[1] + 1, d[2] + offset[2] + 1];
    let mut labels = vec![0u32; big[0] * big[1] * big[2]];
    let mut data = vec![-1000f32; labels.len()];
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                let i = (x + offset[0]) + big[0] * ((y + offset[1]) + big[1] * (z + offset[2]));
                labels[i] = mask.get(x, y, z);
                data[i] = vol.get(x, y, z);
            }
        }
    }
    let spacing = mask.spacing().map(|s| s * scale);
    (
        LabelMask::new(big, spacing, labels, mask.label_table().clone()).unwrap(),
        VoxelVolume::new(big, spacing, Modality::CT, data).unwrap(),
    )
}

fn radiomics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    let mut checked = 0;
    for case in 0..200 {
        let (mask, vol) = random_case(&mut rng);
        let offset = [rng.gen_range(0..4), rng.gen_range(0..4), rng.gen_range(0..4)];
        let (moved, moved_vol) = shifted(&mask, &vol, offset, 2.0);
        for label in [1u32, 2] {
            let Ok(f) = compute_features(&vol, &mask, label) else {
                ensure!(!mask.labels().contains(&label), "case {case}: label {label} present but rejected");
                continue;
            };
            ensure!(
                f.volume_cm3 == oracle::volume_cm3(&mask, label),
                "case {case}: volume {} vs oracle {}",
                f.volume_cm3,
                oracle::volume_cm3(&mask, label)
            );
            ensure!(
                f.surface_area_mm2 == oracle::area_mm2(&mask, label),
                "case {case}: area {} vs oracle {}",
                f.surface_area_mm2,
                oracle::area_mm2(&mask, label)
            );
            // translated and spacing doubled: volume x8, area x4, shape unchanged
            let g = compute_features(&moved_vol, &moved, label).map_err(|e| e.to_string())?;
            ensure!(g.volume_cm3 == 8.0 * f.volume_cm3, "case {case}: scaled volume {}", g.volume_cm3);
            ensure!(g.surface_area_mm2 == 4.0 * f.surface_area_mm2, "case {case}: scaled area {}", g.surface_area_mm2);
            ensure!((g.sphericity - f.sphericity).abs() < 1e-12, "case {case}: sphericity moved");
            ensure!(g.voxel_count == f.voxel_count, "case {case}: voxel count moved");
            checked += 1;
        }
    }
    Ok(format!("200 masks, {checked} organs exact, translation/scale laws hold"))
}

fn metrics_fixtures() -> Check {
    let t = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    let b = bleu(&[t("the the the the")], &[t("the cat")]).map_err(|e| e.to_string())?;
    ensure!((b[0] - 0.25).abs() <= 1e-12, "clipped BLEU-1 {}", b[0]);
    let r = rouge_l(&t("the cat sat on the mat"), &t("the cat ate the mat")).map_err(|e| e.to_string())?;
    ensure!((r.f1 - 8.0 / 11.0).abs() <= 1e-9, "ROUGE-L F1 {}", r.f1);
    let s = t("the left kidney measures 11 cm and appears normal");
    let id = bleu(&[s.clone()], &[s]).map_err(|e| e.to_string())?;
    ensure!(id == [1.0; 4], "identity BLEU {id:?}");

    let vocab = ["the", "kidney", "is", "a", "normal", "small"];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let words = |rng: &mut ChaCha8Rng| -> Vec<&str> {
        let n = rng.gen_range(0..=10);
        (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect()
    };
    for i in 0..500 {
        let (a, b) = (words(&mut rng), words(&mut rng));
        let (fast, slow) = (lcs_len(&a, &b), oracle::lcs_brute(&a, &b));
        ensure!(fast == slow, "pair {i}: lcs {fast} vs brute force {slow}");
    }
    Ok(format!("BLEU-1 {:.12}, ROUGE-L F1 {:.12}, identity 1.0, 500 LCS pairs", b[0], r.f1))
}

fn radassist(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "radassist {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(out.stdout)
}

fn row<'a>(report: &'a Value, stratum: &str) -> Result<&'a Value, String> {
    report["strata"]
        .as_array()
        .and_then(|rows| rows.iter().find(|r| r["stratum"] == stratum))
        .ok_or_else(|| format!("no {stratum} row"))
}

fn trend() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    radassist(&["dataset", "synth", "--n", "500", "--seed", "42", "--out", &d("corpus")])?;
    let mut reports = Vec::new();
    for condition in ["with", "prefix"] {
        let all = d(&format!("{condition}.jsonl"));
        let train = d(&format!("{condition}.train.jsonl"));
        let test = d(&format!("{condition}.test.jsonl"));
        let pred = d(&format!("{condition}.pred.jsonl"));
        radassist(&[
            "dataset", "build", "--reports", &d("corpus/reports"), "--features", &d("corpus/features"),
            "--organ", "kidney", "--condition", condition, "--out", &all,
        ])?;
        radassist(&["dataset", "split", "--in", &all, "--seed", "1", "--train", &train, "--test", &test])?;
        radassist(&["complete", "--dataset", &test, "--out", &pred])?;
        let out = radassist(&["eval", "--pred", &pred, "--ref", &test, "--model", "rule"])?;
        reports.push(serde_json::from_slice::<Value>(&out).map_err(|e| e.to_string())?);
    }
    let get = |r: &Value, stratum: &str, k: &str| -> Result<f64, String> {
        row(r, stratum)?[k].as_f64().ok_or_else(|| format!("{stratum}.{k} missing"))
    };
    let (with, without) = (&reports[0], &reports[1]);
    let (b_with, b_without) = (get(with, "All", "bleu4")?, get(without, "All", "bleu4")?);
    let (r_with, r_without) = (get(with, "All", "rougeL_f1")?, get(without, "All", "rougeL_f1")?);
    let (normal, abnormal) = (get(with, "Normal", "bleu4")?, get(with, "Abnormal", "bleu4")?);
    let summary = format!(
        "BLEU-4 {b_with:.3} vs {b_without:.3}, ROUGE-L {r_with:.3} vs {r_without:.3}, \
         BLEU-4 abnormal {abnormal:.3} / normal {normal:.3}"
    );
    ensure!(b_with - b_without >= 0.10, "{summary}: BLEU-4 gap below 0.10");
    ensure!(r_with > r_without, "{summary}: ROUGE-L not higher with radiomics");
    ensure!(abnormal >= normal, "{summary}: abnormal stratum below normal");
    Ok(summary)
}

fn split_determinism() -> Check {
    let items: Vec<u32> = (0..208).collect();
    let spec = SplitSpec {
        train_fraction: 0.9,
        seed: 42,
    };
    let first = split(&items, &spec).map_err(|e| e.to_string())?;
    let second = split(&items, &spec).map_err(|e| e.to_string())?;
    ensure!(first.0.len() == 187 && first.1.len() == 21, "sizes {}/{}", first.0.len(), first.1.len());
    ensure!(first == second, "partitions differ between runs");
    let mut all: Vec<u32> = first.0.iter().chain(&first.1).copied().collect();
    all.sort_unstable();
    ensure!(all == items, "partition is not a permutation of the input");
    Ok("187/21, identical across runs".into())
}

fn upload_and_session(http: &Http) -> Result<String, String> {
    let (v, m) = reference_study();
    let (image, mask) = nifti_pair(&v, &m);
    let (status, body) = http.upload(&[("image", &image), ("mask", &mask), ("descriptor", &descriptor())]);
    ensure!(status == 201, "upload {status}: {body}");
    let study = body["study_id"].as_str().unwrap_or_default().to_owned();
    let (status, body) = http.post(
        &format!("/studies/{study}/analyze"),
        json!({"organs": ["kidney_left", "kidney_right"]}),
    );
    ensure!(status == 200, "analyze {status}: {body}");
    let (status, body) = http.post("/sessions", json!({"study_id": study, "organ": "kidney"}));
    ensure!(status == 201, "session {status}: {body}");
    ensure!(body["feature_payload"] == REFERENCE_PROMPT, "payload {}", body["feature_payload"]);
    Ok(body["session_id"].as_str().unwrap_or_default().to_owned())
}

fn check_done(events: &[(String, Value)]) -> Result<&Value, String> {
    let (name, done) = events.last().ok_or("empty stream")?;
    ensure!(name == "done", "stream ended with {name}");
    let count = done["token_count"].as_f64().ok_or("done without token_count")?;
    let ms = done["elapsed_ms"].as_f64().ok_or("done without elapsed_ms")?;
    let tps = done["tokens_per_sec"].as_f64().ok_or("done without tokens_per_sec")?;
    ensure!(done["suggestion_id"].is_u64(), "done without suggestion_id");
    ensure!((tps - count / (ms / 1000.0)).abs() <= 0.01 * tps, "tokens_per_sec {tps} inconsistent");
    Ok(done)
}

fn end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = write_config(dir.path(), json!({}));
    let server = ServeProcess::spawn(&config);
    let http = Http::new(&server.base);
    let session = upload_and_session(&http)?;
    let (status, events) = http.suggestion(&session);
    ensure!(status == 200, "suggestion {status}");
    let tokens = token_texts(&events);
    ensure!(tokens == NORMAL_TOKENS, "tokens {tokens:?}");
    check_done(&events)?;
    let (status, body) = http.post(&format!("/sessions/{session}/accept"), json!({"mode": "Full"}));
    ensure!(status == 200, "accept {status}: {body}");
    server.kill9();

    let server = ServeProcess::spawn(&config);
    let http = Http::new(&server.base);
    let (status, report) = http.get(&format!("/sessions/{session}/report"));
    ensure!(status == 200, "report after restart {status}");
    ensure!(report["accepted_text"] == NORMAL_SENTENCE, "report after restart {}", report["accepted_text"]);
    Ok("7 tokens + done; report intact after kill -9".into())
}

fn cancellation() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let slow: Arc<dyn Backend> = Arc::new(Paced::new(Arc::new(RuleBackend::default()), Duration::from_millis(100)));
    let server = TestServer::start(dir.path(), slow);
    let http = &server.http;
    let session = upload_and_session(http)?;
    let path = format!("/sessions/{session}/suggestion");

    // explicit cancel
    let mut stream = http.open_stream(&path);
    for _ in 0..2 {
        stream.next_event().ok_or("stream ended early")?;
    }
    let (status, _) = http.post_empty(&format!("/sessions/{session}/cancel"));
    ensure!(status == 200, "cancel {status}");
    let mut late = 0;
    while let Some((name, _)) = stream.next_event() {
        late += usize::from(name == "token");
    }
    ensure!(late <= 1, "{late} tokens after cancel");

    // client hangs up
    {
        let mut stream = http.open_stream(&path);
        stream.next_event().ok_or("stream ended early")?;
    }
    let deadline = Instant::now() + Duration::from_secs(5);
    while http.get(&format!("/sessions/{session}/report")).1["streaming"] != false {
        ensure!(Instant::now() < deadline, "disconnect not noticed");
        std::thread::sleep(Duration::from_millis(20));
    }

    let (status, events) = http.suggestion(&session);
    ensure!(status == 200, "follow-up suggestion {status}");
    ensure!(token_texts(&events) == NORMAL_TOKENS, "follow-up tokens {:?}", token_texts(&events));
    Ok(format!("{late} token(s) after cancel; session reusable after cancel and disconnect"))
}

fn throughput() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let server = TestServer::start(dir.path(), Arc::new(RuleBackend::default()));
    let session = upload_and_session(&server.http)?;
    let mut rates = Vec::new();
    for _ in 0..21 {
        let (_, events) = server.http.suggestion(&session);
        rates.push(check_done(&events)?["tokens_per_sec"].as_f64().unwrap_or(0.0));
        server.http.post_empty(&format!("/sessions/{session}/reject"));
    }
    rates.sort_by(f64::total_cmp);
    let median = rates[rates.len() / 2];
    ensure!(median >= 500.0, "median {median:.0} tok/s below 500");
    Ok(format!("median {median:.0} tok/s over 21 suggestions (min {:.0})", rates[0]))
}

fn remote_conformance() -> Check {
    let payload = REFERENCE_PROMPT;
    let run = |reply: fn(&Value) -> MockReply, timeout: Duration| {
        let server = MockChatServer::start(reply).expect("mock binds");
        let backend = RemoteBackend::new(RemoteConfig {
            base_url: server.base_url(),
            model: "mock".into(),
            timeout,
            ..RemoteConfig::default()
        });
        let mut tokens = Vec::new();
        let mut sink = |t: &str| {
            tokens.push(t.to_owned());
            ControlFlow::Continue(())
        };
        let r = backend.generate(payload, &BackendParams::default(), &mut sink);
        (r, tokens)
    };
    let long = Duration::from_secs(5);

    let (r, tokens) = run(|_| MockReply::Rules, long);
    ensure!(r == Ok(StreamEnd::Finished) && tokens == NORMAL_TOKENS, "order: {r:?} {tokens:?}");
    let (r, _) = run(
        |_| MockReply::Stream {
            deltas: vec!["a".into()],
            delay: Duration::ZERO,
            done: false,
        },
        long,
    );
    ensure!(matches!(r, Err(BackendError::StreamCorrupt(_))), "missing [DONE]: {r:?}");
    let (r, tokens) = run(
        |_| MockReply::Data(vec![r#"{"choices":[{"delta":{"content":"x"}}]}"#.into(), "[DONE]".into(), "late".into()]),
        long,
    );
    ensure!(r == Ok(StreamEnd::Finished) && tokens == ["x"], "after [DONE]: {r:?} {tokens:?}");
    let (r, _) = run(|_| MockReply::Data(vec!["{oops".into()]), long);
    ensure!(matches!(r, Err(BackendError::StreamCorrupt(_))), "malformed chunk: {r:?}");
    let start = Instant::now();
    let (r, _) = run(|_| MockReply::Stall(Duration::from_secs(5)), Duration::from_millis(300));
    ensure!(r == Err(BackendError::Timeout), "stall: {r:?}");
    ensure!(start.elapsed() < Duration::from_secs(3), "timeout took {:?}", start.elapsed());
    let (r, _) = run(|_| MockReply::Status(503), long);
    ensure!(matches!(r, Err(BackendError::Unavailable { status: Some(503), .. })), "503: {r:?}");
    Ok("order, [DONE], malformed chunk, timeout, HTTP status".into())
}

fn main() {
    let criteria: [(&str, Box<dyn FnOnce() -> Check>); 9] = [
        ("prompt fidelity", Box::new(prompt_fidelity)),
        ("radiomics oracle", Box::new(|| timed(Duration::from_secs(5), radiomics_oracle))),
        ("metrics fixtures", Box::new(|| timed(Duration::from_secs(5), metrics_fixtures))),
        ("trend reproduction", Box::new(|| timed(Duration::from_secs(60), trend))),
        ("split determinism", Box::new(split_determinism)),
        ("end-to-end service", Box::new(|| timed(Duration::from_secs(30), end_to_end))),
        ("cancellation", Box::new(cancellation)),
        ("throughput", Box::new(throughput)),
        ("remote conformance", Box::new(remote_conformance)),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
