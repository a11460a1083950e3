use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;

use compl_core::decision::{DecisionProblem, PayoffMode};
use compl_core::labeler::{self, LabelConfig};
use compl_core::posterior::{self, FitConfig};
use compl_core::reward::service::{self, ErrorResponse, RewardResponse};
use compl_core::reward::RewardContext;
use compl_core::synth::{self, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn context() -> RewardContext {
    let problem = DecisionProblem::binary_accuracy();
    let data = synth::generate(&SynthConfig {
        n: 300,
        seed: 9,
        ..SynthConfig::default()
    })
    .unwrap()
    .dataset;
    let model = posterior::fit_greedy(&data, &problem, &FitConfig::default()).unwrap();
    let labels = labeler::label_dataset(&data, &model, &problem, &LabelConfig::default(), 2).unwrap();
    RewardContext::new(data, labels, model, problem, PayoffMode::Realized).unwrap()
}

fn random_request(ctx: &RewardContext, rng: &mut ChaCha8Rng, k: usize) -> (String, Vec<String>) {
    let data = ctx.dataset();
    let i = rng.random_range(0..data.len());
    let mut names: Vec<String> = data
        .space
        .names()
        .filter(|_| rng.random_bool(0.2))
        .map(str::to_string)
        .collect();
    match k % 5 {
        0 => names = ctx.labels()[i].ones().map(|j| data.space.name(j).to_string()).collect(),
        1 => names.push("Not A Finding".into()),
        2 => names.iter_mut().for_each(|n| *n = n.replace('_', " ").to_uppercase()),
        _ => {}
    }
    (data.instances[i].id.clone(), names)
}

#[test]
fn service_matches_library_bit_for_bit() {
    let ctx = context();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..100 {
        let (id, names) = random_request(&ctx, &mut rng, k);
        let line = json!({ "op": "reward", "id": k, "instance_id": id, "signals": names }).to_string();
        let resp: RewardResponse = serde_json::from_str(&service::handle_line(&ctx, &line)).unwrap();
        let lib = ctx.reward_names(&id, &names).unwrap();
        assert_eq!(resp.id, Some(json!(k)));
        assert_eq!(resp.instance_id, lib.instance_id);
        assert_eq!(resp.reward.to_bits(), lib.reward.to_bits());
        assert_eq!(resp.alpha.to_bits(), lib.alpha.to_bits());
        assert_eq!(resp.improvement.to_bits(), lib.improvement.to_bits());
        assert_eq!(resp.supported, lib.supported);
    }
}

#[test]
fn wire_examples() {
    let ctx = context();
    let data = ctx.dataset();
    let i = (0..data.len()).find(|&i| !ctx.labels()[i].any()).unwrap();
    let id = &data.instances[i].id;
    let empty: RewardResponse =
        serde_json::from_str(&service::handle_line(&ctx, &json!({"op": "reward", "instance_id": id, "signals": []}).to_string()))
            .unwrap();
    assert_eq!((empty.reward, empty.supported), (1.0, true));
    let unknown: RewardResponse = serde_json::from_str(&service::handle_line(
        &ctx,
        &json!({"op": "reward", "instance_id": id, "signals": ["made_up_finding"]}).to_string(),
    ))
    .unwrap();
    assert_eq!((unknown.reward, unknown.supported), (0.0, false));

    let error = |line: &str| serde_json::from_str::<ErrorResponse>(&service::handle_line(&ctx, line)).unwrap();
    assert_eq!(error("{not json").error, "malformed_request");
    assert_eq!(error(r#"{"op": "reward", "id": "a"}"#).id, Some(json!("a")));
    assert_eq!(error(r#"{"op": "score"}"#).error, "unknown_op");
    assert_eq!(error(r#"{"op": "reward", "instance_id": "nope", "signals": []}"#).error, "unknown_instance");
}

#[test]
fn every_line_gets_one_reply_and_errors_keep_the_stream_open() {
    let ctx = context();
    let id = &ctx.dataset().instances[0].id;
    let input = format!(
        "{}\n\ngarbage\n{}\n",
        json!({"op": "reward", "instance_id": id, "signals": []}),
        json!({"op": "reward", "instance_id": id, "signals": ["edema"]})
    );
    let mut out = Vec::new();
    service::serve_stream(&ctx, input.as_bytes(), &mut out).unwrap();
    let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains("malformed_request"));
    assert!(lines[2].contains("\"reward\""));
}

#[test]
fn tcp_connections_are_served_concurrently() {
    let ctx = Arc::new(context());
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = Arc::clone(&ctx);
    std::thread::spawn(move || service::serve_listener(server, listener));

    let ids: Vec<String> = ctx.dataset().instances[..4].iter().map(|i| i.id.clone()).collect();
    let handles: Vec<_> = ids
        .into_iter()
        .map(|id| {
            let ctx = Arc::clone(&ctx);
            std::thread::spawn(move || {
                let mut stream = TcpStream::connect(addr).unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                for names in [vec![], vec!["edema".to_string()], vec!["pleural_effusion".to_string(), "edema".to_string()]] {
                    writeln!(stream, "{}", json!({"op": "reward", "instance_id": id, "signals": names})).unwrap();
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let resp: RewardResponse = serde_json::from_str(&line).unwrap();
                    assert_eq!(resp.reward.to_bits(), ctx.reward_names(&id, &names).unwrap().reward.to_bits());
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}
