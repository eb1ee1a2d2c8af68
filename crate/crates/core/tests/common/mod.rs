#![allow(dead_code)]

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::Value;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_detoxkit")
}

/// Brute-force set of character n-grams: every window of the normalised
/// string, or the whole string when shorter than `n`.
pub fn oracle_grams(text: &str, n: usize) -> HashSet<Vec<char>> {
    let chars: Vec<char> = detoxkit::text::normalize(text).chars().collect();
    let mut out = HashSet::new();
    if chars.is_empty() {
        return out;
    }
    if chars.len() < n {
        out.insert(chars);
        return out;
    }
    for start in 0..chars.len() {
        for end in start..=chars.len() {
            if end - start == n {
                out.insert(chars[start..end].to_vec());
            }
        }
    }
    out
}

pub fn oracle_jaccard(a: &str, b: &str, n: usize) -> f64 {
    let (ga, gb) = (oracle_grams(a, n), oracle_grams(b, n));
    if ga.is_empty() && gb.is_empty() {
        return 1.0;
    }
    let inter = ga.iter().filter(|g| gb.contains(*g)).count();
    let union = ga.len() + gb.len() - inter;
    inter as f64 / union as f64
}

/// One-way ANOVA from pairwise differences: SST and each group's SS are
/// `sum_{i<j} (x_i - x_j)^2 / n`, SSB is `sum_{g<h} n_g n_h (m_g - m_h)^2 / N`.
/// None of it shares arithmetic with the mean-deviation form under test.
pub struct OracleAnova {
    pub ssb: f64,
    pub ssw: f64,
    pub sst: f64,
    pub f: f64,
    pub eta2: f64,
}

pub fn oracle_anova(groups: &[Vec<f64>]) -> OracleAnova {
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let mut sst = 0.0;
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            sst += (all[i] - all[j]).powi(2);
        }
    }
    sst /= n;
    let mut ssw = 0.0;
    for g in groups {
        let mut s = 0.0;
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                s += (g[i] - g[j]).powi(2);
            }
        }
        ssw += s / g.len() as f64;
    }
    let means: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
    let mut ssb = 0.0;
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            ssb += (groups[a].len() * groups[b].len()) as f64 * (means[a] - means[b]).powi(2);
        }
    }
    ssb /= n;
    let k = groups.len() as f64;
    let f = (ssb / (k - 1.0)) / (ssw / (n - k));
    OracleAnova {
        ssb,
        ssw,
        sst,
        f,
        eta2: ssb / sst,
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// A recorded request: method, path and parsed JSON body (null for GET).
pub type Seen = Arc<Mutex<Vec<(String, String, Value)>>>;

/// Minimal HTTP/1.1 server on an ephemeral port. Each request is answered
/// by `handler(method, path, body) -> (status, json)`.
pub struct MockServer {
    pub url: String,
    pub seen: Seen,
}

impl MockServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&str, &str, &Value) -> (u16, Value) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen: Seen = Arc::default();
        let handler = Arc::new(handler);
        let log = seen.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let handler = handler.clone();
                let log = log.clone();
                thread::spawn(move || serve(stream, &*handler, &log));
            }
        });
        MockServer { url, seen }
    }

    pub fn paths(&self) -> Vec<String> {
        self.seen.lock().unwrap().iter().map(|(_, p, _)| p.clone()).collect()
    }
}

fn serve(stream: TcpStream, handler: &dyn Fn(&str, &str, &Value) -> (u16, Value), log: &Seen) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
            return;
        }
        let mut parts = request_line.split_whitespace();
        let method = parts.next().unwrap_or_default().to_string();
        let path = parts.next().unwrap_or_default().to_string();
        let mut length = 0usize;
        loop {
            let mut header = String::new();
            if reader.read_line(&mut header).unwrap_or(0) == 0 {
                return;
            }
            let header = header.trim_end();
            if header.is_empty() {
                break;
            }
            if let Some((k, v)) = header.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        let body: Value = if body.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&body).unwrap_or(Value::Null)
        };
        log.lock().unwrap().push((method.clone(), path.clone(), body.clone()));
        let (status, reply) = handler(&method, &path, &body);
        let payload = reply.to_string();
        let response = format!(
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
            payload.len()
        );
        if writer.write_all(response.as_bytes()).is_err() {
            return;
        }
    }
}

/// Runs the CLI with `args`, panicking with its stderr on failure.
pub fn detoxkit(args: &[&std::ffi::OsStr]) -> std::process::Output {
    let out = std::process::Command::new(bin()).args(args).output().expect("spawn detoxkit");
    assert!(out.status.success(), "detoxkit {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Files produced by the golden chain, in production order.
pub const GOLDEN_OUTPUTS: [&str; 6] = [
    "clean.jsonl",
    "clean_report.json",
    "enriched.jsonl",
    "gens.jsonl",
    "metrics.jsonl",
    "summary.json",
];

/// clean, enrich, infer with the delete stub, evaluate with the fallback
/// scorer, all on the shipped fixture. Outputs land in `dir`.
pub fn run_golden_chain(dir: &Path, parallelism: &str) -> Vec<(String, Vec<u8>)> {
    let fx = fixture_dir();
    let lex = fx.join("lexicons");
    let p = |name: &str| dir.join(name).into_os_string();
    let common: Vec<std::ffi::OsString> = vec![
        "--lexicon-dir".into(),
        lex.into_os_string(),
        "--scorer".into(),
        "fallback".into(),
        "--parallelism".into(),
        parallelism.into(),
    ];
    let run = |args: Vec<std::ffi::OsString>| {
        let all: Vec<std::ffi::OsString> = args.into_iter().chain(common.iter().cloned()).collect();
        let refs: Vec<&std::ffi::OsStr> = all.iter().map(|a| a.as_os_str()).collect();
        detoxkit(&refs);
    };
    run(vec![
        "clean".into(),
        "--input".into(),
        fx.join("pairs.jsonl").into_os_string(),
        "--output".into(),
        p("clean.jsonl"),
        "--report".into(),
        p("clean_report.json"),
    ]);
    run(vec!["enrich".into(), "--input".into(), p("clean.jsonl"), "--output".into(), p("enriched.jsonl")]);
    run(vec![
        "infer".into(),
        "--generator".into(),
        "delete".into(),
        "--input".into(),
        p("enriched.jsonl"),
        "--golds".into(),
        p("clean.jsonl"),
        "--output".into(),
        p("gens.jsonl"),
    ]);
    run(vec![
        "evaluate".into(),
        "--inputs".into(),
        p("enriched.jsonl"),
        "--gens".into(),
        p("gens.jsonl"),
        "--golds".into(),
        p("clean.jsonl"),
        "--out".into(),
        p("metrics.jsonl"),
        "--summary".into(),
        p("summary.json"),
    ]);
    GOLDEN_OUTPUTS
        .iter()
        .map(|name| (name.to_string(), std::fs::read(dir.join(name)).expect("golden output")))
        .collect()
}

pub fn expected_dir() -> PathBuf {
    fixture_dir().join("expected")
}
