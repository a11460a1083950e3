use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicU32, Ordering};
use std::time::Duration;

use compl_core::decision::DecisionProblem;
use compl_core::dgp::{
    self, annotate_occurrences, discover_signal_space, majority, CachedClient, ChatClient, FnClient, MockClient,
    OccurrenceFile, OpenAiClient, PromptTemplates, SamplingConfig,
};
use compl_core::{Error, Instance, SignalSpace};
use proptest::prelude::*;

fn corpus(n: usize, mentions: &[(&str, usize)]) -> Vec<Instance> {
    (0..n)
        .map(|i| {
            let text: Vec<String> = mentions
                .iter()
                .filter(|(_, k)| i < *k)
                .map(|(f, _)| format!("There is {f}."))
                .collect();
            let text = if text.is_empty() { "No findings.".to_string() } else { text.join(" ") };
            let text = format!("Record {i}. {text}");
            Instance::new(format!("doc-{i}"), text, 0.5, if i % 2 == 0 { "1" } else { "0" })
        })
        .collect()
}

fn config() -> SamplingConfig {
    SamplingConfig {
        concurrency: 4,
        ..SamplingConfig::default()
    }
}

#[test]
fn frequent_findings_pass_the_cutoff_and_rare_ones_do_not() {
    let docs = corpus(1000, &[("edema", 200), ("rare thing", 10)]);
    let d = discover_signal_space(&docs, &DecisionProblem::binary_accuracy(), &MockClient, &config(), &PromptTemplates::default())
        .unwrap();
    assert_eq!(d.prior, 0.5);
    let oracle = 1.959964f64.powi(2) * 0.25 / 0.01 * 7.0;
    assert!((d.cutoff - oracle).abs() < 0.05, "{}", d.cutoff);
    assert_eq!(d.counts["edema"], 1400);
    assert_eq!(d.counts["rare_thing"], 70);
    assert_eq!(d.space.names().collect::<Vec<_>>(), vec!["edema"]);
    assert_eq!(d.malformed_samples, 0);
}

#[test]
fn empty_corpus_gives_empty_space() {
    let d = discover_signal_space(&[], &DecisionProblem::binary_accuracy(), &MockClient, &config(), &PromptTemplates::default())
        .unwrap();
    assert!(d.space.is_empty());
}

#[test]
fn unparseable_samples_contribute_nothing() {
    let docs = corpus(20, &[("edema", 20)]);
    let client = FnClient(|_: &str, _: f64, _: u32| Ok("I cannot help with that.".to_string()));
    let d = discover_signal_space(&docs, &DecisionProblem::binary_accuracy(), &client, &config(), &PromptTemplates::default())
        .unwrap();
    assert!(d.counts.is_empty());
    assert_eq!(d.malformed_samples, 20 * 7);
}

#[test]
fn majority_vote_over_samples() {
    let docs = corpus(3, &[]);
    let space = SignalSpace::from_names(["edema"]).unwrap();
    let cfg = config();
    let templates = PromptTemplates::default();
    let votes = |yes: u32| {
        let client = FnClient(move |_: &str, _: f64, s: u32| Ok(if s < yes { "yes" } else { "no" }.to_string()));
        annotate_occurrences(&docs, &space, &client, &cfg, &templates).unwrap()
    };
    assert!(votes(4).rows.iter().all(|r| r.get(0)));
    assert!(votes(3).rows.iter().all(|r| !r.get(0)));
    assert_eq!(votes(7).vote_counts, vec![vec![7]; 3]);
    assert!(matches!(
        annotate_occurrences(&docs, &SignalSpace::default(), &MockClient, &cfg, &templates),
        Err(Error::Contract(_))
    ));
}

#[test]
fn mock_annotation_recovers_stated_findings() {
    let docs = corpus(12, &[("edema", 5), ("pleural effusion", 9)]);
    let space = SignalSpace::from_names(["edema", "pleural_effusion", "fracture"]).unwrap();
    let occ = annotate_occurrences(&docs, &space, &MockClient, &config(), &PromptTemplates::default()).unwrap();
    for (i, row) in occ.rows.iter().enumerate() {
        assert_eq!(row.bits(), &[i < 5, i < 9, false]);
    }
}

#[test]
fn warm_cache_reproduces_without_calls() {
    let dir = tempfile::tempdir().unwrap();
    let calls = AtomicU32::new(0);
    let inner = FnClient(|p: &str, t: f64, s: u32| {
        calls.fetch_add(1, Ordering::SeqCst);
        MockClient.complete(p, t, s)
    });
    let docs = corpus(30, &[("edema", 30), ("atelectasis", 12)]);
    let problem = DecisionProblem::binary_accuracy();
    let cfg = SamplingConfig {
        epsilon: 0.5,
        ..config()
    };
    let templates = PromptTemplates::default();
    let run = || {
        let client = CachedClient::new(&inner, dir.path()).unwrap();
        let d = discover_signal_space(&docs, &problem, &client, &cfg, &templates).unwrap();
        let occ = annotate_occurrences(&docs, &d.space, &client, &cfg, &templates).unwrap();
        (d, occ)
    };
    let first = run();
    let cold = calls.load(Ordering::SeqCst);
    assert!(cold > 0);
    let second = run();
    assert_eq!(calls.load(Ordering::SeqCst), cold);
    assert_eq!(first.0, second.0);
    assert_eq!(first.1, second.1);
}

#[test]
fn transport_failure_is_a_pipeline_error_and_keeps_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let docs = corpus(10, &[("edema", 5)]);
    let inner = FnClient(|p: &str, t: f64, s: u32| {
        if p.contains("No findings.") {
            Err(Error::Client("connection refused".into()))
        } else {
            MockClient.complete(p, t, s)
        }
    });
    let client = CachedClient::new(inner, dir.path()).unwrap();
    let err = discover_signal_space(&docs, &DecisionProblem::binary_accuracy(), &client, &config(), &PromptTemplates::default())
        .unwrap_err();
    assert!(matches!(err, Error::Pipeline(_)));
    let cached = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(cached, 5 * 7);
}

#[test]
fn occurrence_file_round_trip() {
    let docs = corpus(6, &[("edema", 3)]);
    let space = SignalSpace::from_names(["edema"]).unwrap();
    let occ = annotate_occurrences(&docs, &space, &MockClient, &config(), &PromptTemplates::default()).unwrap();
    let file = OccurrenceFile::new(&docs, space, &occ.rows, Some(&occ)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.occ.json");
    file.write(&path).unwrap();
    let back = OccurrenceFile::read(&path).unwrap();
    assert_eq!(back, file);
    let data = back.attach(docs.clone()).unwrap();
    assert_eq!(data.occurrences().unwrap(), &occ.rows[..]);
    assert_eq!(back.attach(docs[2..].to_vec()).unwrap().len(), 4);
    let mut extra = docs;
    extra.push(Instance::new("ghost", "", 0.5, "0"));
    assert!(back.attach(extra).is_err());
}

/// Minimal HTTP responder: answers one request with a fixed completion and returns the request.
fn fake_endpoint(reply: &'static str) -> (String, std::thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut head = String::new();
        let mut length = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                length = v.trim().parse().unwrap();
            }
            head.push_str(&line);
            if line == "\r\n" {
                break;
            }
        }
        let mut body = vec![0u8; length];
        reader.read_exact(&mut body).unwrap();
        let payload = serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": reply } }] }).to_string();
        let mut out = stream;
        write!(
            out,
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
            payload.len()
        )
        .unwrap();
        head + &String::from_utf8(body).unwrap()
    });
    (url, handle)
}

#[test]
fn openai_client_speaks_chat_completions() {
    let (url, server) = fake_endpoint("yes");
    let client = OpenAiClient::new(url, Some("k-123".into()), "tiny-model", Duration::from_secs(10));
    assert_eq!(client.complete("Is it there?", 0.7, 3).unwrap(), "yes");
    let request = server.join().unwrap();
    assert!(request.starts_with("POST /v1/chat/completions"));
    assert!(request.to_ascii_lowercase().contains("authorization: bearer k-123"));
    let body: serde_json::Value = serde_json::from_str(&request[request.find("\r\n\r\n").unwrap() + 4..]).unwrap();
    assert_eq!(body["model"], "tiny-model");
    assert_eq!(body["messages"][0]["content"], "Is it there?");
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["seed"], 3);
}

#[test]
fn unreachable_endpoint_is_a_client_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = OpenAiClient::new(format!("http://127.0.0.1:{port}"), None, "m", Duration::from_secs(2));
    assert!(matches!(client.complete("x", 0.0, 0), Err(Error::Client(_))));
}

proptest! {
    #[test]
    fn majority_is_monotone_in_votes(zeta in 1u32..15, yes in 0u32..15) {
        prop_assume!(yes < zeta);
        prop_assert!(!majority(yes, zeta) || majority(yes + 1, zeta));
        prop_assert_eq!(majority(yes, zeta), 2 * yes > zeta);
    }

    #[test]
    fn normalized_names_are_canonical(raw in "[ A-Za-z0-9_,.!-]{0,24}") {
        if let Some(n) = dgp::normalize_signal_name(&raw) {
            prop_assert!(!n.is_empty());
            prop_assert!(n.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'));
            prop_assert!(!n.starts_with('_') && !n.ends_with('_') && !n.contains("__"));
            prop_assert_eq!(dgp::normalize_signal_name(&n), Some(n.clone()));
        }
    }
}
