//! End-to-end acceptance criteria. Each test writes one `[criterion N] PASS`
//! or `FAIL` line to stderr (bypassing the test harness capture) before
//! asserting.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Instant;

use convcoa::cks::{ContextualKnowledgeSet, RoundRecord};
use convcoa::coa::{
    parse_action_chain, run_turn, ActionKind, CoaConfig, FixturePage, FixtureSearch, ScriptedLlm, Stage, Transcript,
    TurnDeps,
};
use convcoa::embedding::{quantize_int8, EmbeddingProvider, HashEmbedder};
use convcoa::eval::{mrr, recall_at_k};
use convcoa::hopfield::{
    associate, configure_mode, retrieve_top_k, segmented_retrieve, HopfieldMode, HopfieldProjections, MemoryBank,
    ModeDims,
};
use convcoa::numerics::{sparsemax, sparsemax_jacobian_apply};
use convcoa::store::{build_index, write_index, Document, IndexConfig};
use convcoa::synthetic::question_passage_corpus;
use convcoa::training::{dpr_gradients, dpr_nll, train, TrainConfig, TrainingInstance};
use convcoa::verification::{conv_mrfs, faith_score, FaithWeights};
use convcoa::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[criterion {criterion:>2}] {verdict}: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_vec(r: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| r.random_range(-scale..scale)).collect()
}

fn unit_vec(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v = uniform_vec(r, d, 1.0);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("p{i:06}")).collect()
}

/// Euclidean projection onto the simplex by trying every candidate support.
fn simplex_projection_oracle(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let tau = (support.iter().map(|&i| z[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let p: Vec<f64> = z.iter().map(|&zi| (zi - tau).max(0.0)).collect();
        if (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            continue;
        }
        let dist: f64 = p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, p));
        }
    }
    best.expect("some support is feasible").1
}

#[test]
fn criterion_01_sparsemax_matches_enumeration_oracle() {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = r.random_range(1..=8);
        let z = uniform_vec(&mut r, d, 3.0);
        let got = sparsemax(&z).unwrap().into_inner();
        let want = simplex_projection_oracle(&z);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-9 && secs < 5.0;
    report(1, pass, &format!("max abs err {worst:.3e} (tol 1e-9), {secs:.2}s (limit 5s)"));
    assert!(pass);
}

#[test]
fn criterion_02_sparsemax_jacobian_matches_central_differences() {
    let h = 1e-5;
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let (mut points, mut multi) = (0, 0);
    while points < 200 {
        let d = r.random_range(2..=8);
        let z = uniform_vec(&mut r, d, 1.0);
        let p = sparsemax(&z).unwrap().into_inner();
        // Interior: every coordinate at least 1e-3 away from its kink.
        let tau = z.iter().zip(&p).find(|(_, &pi)| pi > 0.0).map(|(zi, pi)| zi - pi).unwrap();
        if z.iter().any(|zi| (zi - tau).abs() < 1e-3) {
            continue;
        }
        points += 1;
        multi += usize::from(p.iter().filter(|&&pi| pi > 0.0).count() > 1);
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            let analytic = sparsemax_jacobian_apply(&z, &e).unwrap();
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[j] += h;
            zm[j] -= h;
            let fp = sparsemax(&zp).unwrap().into_inner();
            let fm = sparsemax(&zm).unwrap().into_inner();
            for i in 0..d {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                num += (analytic[i] - fd).powi(2);
                den += fd.powi(2);
            }
        }
        // A non-zero Jacobian has Frobenius norm sqrt(|S| - 1) >= 1; the floor
        // only applies to singleton supports, where J = 0.
        worst = worst.max(num.sqrt() / den.sqrt().max(1.0));
    }
    let pass = worst <= 1e-5;
    report(2, pass, &format!("max rel err {worst:.3e} over 200 interior points, {multi} with |S| > 1 (tol 1e-5)"));
    assert!(pass);
}

#[test]
fn criterion_03_one_shot_retrieval_finds_nearest_pattern() {
    let (n, d) = (100, 64);
    let mut r = rng(3);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| unit_vec(&mut r, d)).collect();
    let bank = MemoryBank::new(ids(n), rows.clone()).unwrap();
    let proj = HopfieldProjections::identity(d).with_beta(40.0);
    let (mut correct, mut min_weight) = (0, f64::INFINITY);
    for row in &rows {
        let noise = unit_vec(&mut r, d);
        let q: Vec<f64> = row.iter().zip(&noise).map(|(a, b)| a + 0.3 * b).collect();
        let nearest = rows
            .iter()
            .enumerate()
            .map(|(i, y)| (y.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap()
            .1;
        let res = associate(&q, &bank, &proj).unwrap();
        if res.ranked_ids[0] == bank.id(nearest) {
            correct += 1;
        }
        min_weight = min_weight.min(res.weights.as_slice()[nearest]);
    }
    let pass = correct == n && min_weight >= 0.99;
    report(3, pass, &format!("top-1 correct {correct}/{n}, min weight on nearest {min_weight:.6} (need 0.99)"));
    assert!(pass);
}

#[test]
fn criterion_04_segmented_top_k_equals_full_retrieval() {
    let (n, d, k) = (1000, 32, 10);
    let mut r = rng(4);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(&mut r, d, 1.0)).collect();
    let bank = MemoryBank::new(ids(n), rows.clone()).unwrap();
    let proj = HopfieldProjections::identity(d);
    let mut mismatches = 0;
    for _ in 0..50 {
        let q = uniform_vec(&mut r, d, 1.0);
        let full: Vec<String> = retrieve_top_k(&q, &bank, &proj, k).unwrap().into_iter().map(|h| h.id).collect();
        let mut brute: Vec<(f64, String)> = rows
            .iter()
            .enumerate()
            .map(|(i, y)| (y.iter().zip(&q).map(|(a, b)| a * b).sum(), bank.id(i).to_owned()))
            .collect();
        brute.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let brute: Vec<String> = brute.into_iter().take(k).map(|b| b.1).collect();
        mismatches += usize::from(full != brute);
        for s in [1, 2, 4, 8] {
            let seg: Vec<String> =
                segmented_retrieve(&q, &bank, &proj, s, k).unwrap().into_iter().map(|h| h.id).collect();
            mismatches += usize::from(seg != full);
        }
    }
    let pass = mismatches == 0;
    report(4, pass, &format!("{mismatches} mismatching top-10 lists over 50 queries x segments {{1,2,4,8}}"));
    assert!(pass);
}

fn gradient_check_rel_err() -> f64 {
    let (n, d) = (8, 6);
    let mut r = rng(5);
    let bank = MemoryBank::new(ids(n), (0..n).map(|_| uniform_vec(&mut r, d, 1.0)).collect()).unwrap();
    let batch: Vec<TrainingInstance> = (0..4)
        .map(|i| TrainingInstance {
            question_embedding: uniform_vec(&mut r, d, 1.0),
            positive_id: bank.id(i).to_owned(),
            negative_ids: vec![bank.id(i + 4).to_owned()],
        })
        .collect();
    let proj = configure_mode(HopfieldMode::Association { seed: 11 }, ModeDims::square(d)).unwrap();
    let g = dpr_gradients(&batch, &bank, &proj, true).unwrap();
    let h = 1e-6;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for which in 0..2 {
        for i in 0..d {
            for j in 0..d {
                let (mut plus, mut minus) = (proj.clone(), proj.clone());
                if which == 0 {
                    plus.w_q[[i, j]] += h;
                    minus.w_q[[i, j]] -= h;
                } else {
                    plus.w_k[[i, j]] += h;
                    minus.w_k[[i, j]] -= h;
                }
                let fd = (dpr_nll(&batch, &bank, &plus, true).unwrap() - dpr_nll(&batch, &bank, &minus, true).unwrap())
                    / (2.0 * h);
                let analytic = if which == 0 { g.w_q[[i, j]] } else { g.w_k[[i, j]] };
                num += (analytic - fd).powi(2);
                den += fd.powi(2);
            }
        }
    }
    num.sqrt() / den.sqrt()
}

#[test]
fn criterion_05_training_gradients_and_held_out_recall() {
    let rel_err = gradient_check_rel_err();

    let start = Instant::now();
    let dim = 256;
    let qa = question_passage_corpus(500, 42);
    let embedder = HashEmbedder::new(dim, 0);
    let bank = MemoryBank::new(
        qa.passages.iter().map(|p| p.id.clone()).collect(),
        qa.passages.iter().map(|p| embedder.embed(&p.text).unwrap()).collect(),
    )
    .unwrap();
    let mut pairs: Vec<(Vec<f64>, String)> =
        qa.questions.iter().map(|(q, id)| (embedder.embed(q).unwrap(), id.clone())).collect();
    let held_out = pairs.split_off(400);
    let instances: Vec<TrainingInstance> = pairs
        .into_iter()
        .map(|(q, id)| TrainingInstance {
            question_embedding: q,
            positive_id: id,
            negative_ids: Vec::new(),
        })
        .collect();
    let recall5 = |proj: &HopfieldProjections| {
        let hits = held_out
            .iter()
            .filter(|(q, gold)| retrieve_top_k(q, &bank, proj, 5).unwrap().iter().any(|h| &h.id == gold))
            .count();
        hits as f64 / held_out.len() as f64
    };
    let init = configure_mode(HopfieldMode::Association { seed: 7 }, ModeDims::square(dim)).unwrap();
    let baseline = recall5(&init);
    let out = train(&instances, &bank, init, 20, TrainConfig::default()).unwrap();
    let trained = recall5(&out.projections);
    let secs = start.elapsed().as_secs_f64();
    let monotone = out.loss_history.len() == 20 && out.loss_history.windows(2).all(|w| w[1] <= w[0] + 1e-3);

    let pass = rel_err <= 1e-4 && trained >= 0.9 && monotone && secs < 120.0;
    report(
        5,
        pass,
        &format!(
            "grad rel err {rel_err:.3e} (tol 1e-4); held-out recall@5 {trained:.3} (need 0.9, untrained {baseline:.3}); \
             loss non-increasing: {monotone}; {secs:.1}s (limit 120s)"
        ),
    );
    assert!(pass, "loss history {:?}", out.loss_history);
}

#[test]
fn criterion_06_conv_mrfs_hand_example_and_reductions() {
    let answer = "Paris is the capital of France.";
    let segment = "The capital of France is Paris.";
    // Items {paris, capital, france} on both sides: P = R = 1.
    // Average word length of the answer is 25/6 letters, normalized by 10.
    let expected = 0.5 + 0.4 + 0.1 * (25.0 / 6.0) / 10.0;
    let s = faith_score(segment, answer, &FaithWeights::default(), 10.0).unwrap();
    let hand_ok = (s - 0.941667).abs() <= 1e-6 && (s - expected).abs() <= 1e-12;

    // answer items {red, fox, runs}, segment items {red, fox, sleeps, today}
    let (a, g) = ("red fox runs", "red fox sleeps today");
    let p_only = faith_score(g, a, &FaithWeights::new(1.0, 0.0, 0.0).unwrap(), 10.0).unwrap();
    let r_only = faith_score(g, a, &FaithWeights::new(0.0, 1.0, 0.0).unwrap(), 10.0).unwrap();
    let reductions_ok = p_only == 2.0 / 3.0 && r_only == 2.0 / 4.0;

    let at_threshold =
        conv_mrfs(&["alpha beta".to_string()], "beta gamma", &FaithWeights::new(1.0, 0.0, 0.0).unwrap(), 0.5, 10.0)
            .unwrap();
    let strict_ok = at_threshold.max_score == 0.5 && !at_threshold.faithful;

    let pass = hand_ok && reductions_ok && strict_ok;
    report(
        6,
        pass,
        &format!("S = {s:.7} (want 0.941667 +/- 1e-6); P-only {p_only}, Rcl-only {r_only}; score == T faithful: {}", at_threshold.faithful),
    );
    assert!(pass);
}

const PHOTOSYNTHESIS_SET: &str = r#"{
  "Contextual knowledge set": [
    {
      "round": 1,
      "original_question": "What is the process of ...?",
      "optimized_question": "Explain the steps involved ...",
      "sub_questions": {
        "sub1": "What are the light-dependent reactions ...",
        "sub2": "What are the light-independent reactions ...",
        "sub3": "How do plants convert sunlight into ..."
      },
      "information_summaries": {
        "infor1": "Light-dependent reactions use light ...",
        "infor2": "Light-independent reactions, or the ...",
        "infor3": "Plants convert sunlight into chemical ..."
      },
      "answer": "Photosynthesis is a process where..."
    }
  ]
}"#;

#[test]
fn criterion_07_cks_round_trip_and_contiguity() {
    let cks = ContextualKnowledgeSet::parse(PHOTOSYNTHESIS_SET.as_bytes()).unwrap();
    let identical = cks.serialize() == PHOTOSYNTHESIS_SET.as_bytes();
    let gapped = PHOTOSYNTHESIS_SET.replace("\"round\": 1", "\"round\": 2");
    let parse_rejects = matches!(ContextualKnowledgeSet::parse(gapped.as_bytes()), Err(Error::RoundSequenceError { .. }));
    let record = |n: u64| RoundRecord::new(n, "q", "q", vec![], vec![], "a");
    let append_rejects = matches!(cks.append_round(record(3)), Err(Error::RoundSequenceError { last: 1, got: 3 }));
    let pass = identical && parse_rejects && append_rejects;
    report(
        7,
        pass,
        &format!("byte-identical round trip: {identical}; gap rejected on parse: {parse_rejects}, on append: {append_rejects}"),
    );
    assert!(pass);
}

const DOGECOIN_COMPLETION: &str = r#"{"question": "Is it good to invest in Dogecoin now?"
"chain": [
{"action":"knowledge-encoding","Sub":"what is Dogecoin","guess_answer":"Dogecoin is one cryptocurrency.","missing_flag":"false"}
{"action":"Web-querying","Sub":"Dogecoin news","guess_answer":"","missing_flag":"True"}
,
"final_answer":"Dogecoin is one of the cryptocurrencies that is risky to invest. And its news prompts Bitcoin. So, it is a good time to invest now."}"#;

#[test]
fn criterion_08_chain_parsing_and_single_retry() {
    let chain = parse_action_chain(DOGECOIN_COMPLETION, Stage::Initial).unwrap();
    let shape: Vec<(ActionKind, bool)> = chain.nodes.iter().map(|n| (n.action, n.missing_flag)).collect();
    let dogecoin_ok =
        shape == vec![(ActionKind::KnowledgeEncoding, false), (ActionKind::WebQuerying, true)];

    let wrapped = format!(
        "Sure! Here is the chain:\n{}\nHope this helps.",
        r#"{"chain": [{"action": "web-querying", "sub": "Dogecoin news", "guess_answer": "", "missing_flag": true}]}"#
    );
    let prose_ok = parse_action_chain(&wrapped, Stage::Initial).map(|c| c.nodes.len() == 1).unwrap_or(false);
    let malformed_ok = matches!(parse_action_chain("no json here at all", Stage::Initial), Err(Error::ChainParseError(_)));

    let embedder = HashEmbedder::new(64, 0);
    let docs = [Document {
        id: "doge".into(),
        title: "Dogecoin".into(),
        text: "Dogecoin is a cryptocurrency started in 2013 as a joke.".into(),
        source: String::new(),
    }];
    let index = build_index(&docs, &embedder, IndexConfig::default()).unwrap();
    let search = FixtureSearch::new(vec![FixturePage {
        title: "Dogecoin news".into(),
        snippet: "Dogecoin rallies".into(),
        url: "https://fixture.example/doge".into(),
        content: "Dogecoin rallied this week. Traders remain cautious.".into(),
    }]);
    let projections = HopfieldProjections::identity(64);
    let config = CoaConfig::default();
    let llm = ScriptedLlm::new(["this is not json".to_string(), DOGECOIN_COMPLETION.to_string(), "Risky.".to_string()]);
    let deps = TurnDeps {
        llm: &llm,
        search: &search,
        index: Some(&index),
        embedder: &embedder,
        projections: &projections,
        config: &config,
    };
    let mut transcript = Transcript::new();
    let outcome = run_turn("Is it good to invest in Dogecoin now?", &ContextualKnowledgeSet::new(), &deps, &mut transcript);
    let count = |kind: &str| transcript.events().iter().filter(|e| e.kind == kind).count();
    let prompts = llm.prompts();
    let retry_ok = outcome.is_ok()
        && count("parse_error") == 1
        && count("prompt") == 2
        && prompts.len() == 3
        && prompts[1].starts_with(&prompts[0])
        && prompts[1] != prompts[0];

    let pass = dogecoin_ok && prose_ok && malformed_ok && retry_ok;
    report(
        8,
        pass,
        &format!("dogecoin nodes {shape:?}; prose-wrapped: {prose_ok}; malformed rejected: {malformed_ok}; one retry: {retry_ok}"),
    );
    assert!(pass);
}

#[test]
fn criterion_09_metrics_match_brute_force() {
    let gold = vec![vec!["g".to_string()]; 3];
    let ranked: Vec<Vec<String>> = [1usize, 2, 4]
        .iter()
        .map(|&rank| (1..=5).map(|i| if i == rank { "g".to_string() } else { format!("x{i}") }).collect())
        .collect();
    let m = mrr(&ranked, &gold).unwrap();
    let hand_ok = (m - 0.583333).abs() <= 1e-6 && (m - (1.0 + 0.5 + 0.25) / 3.0).abs() <= 1e-9;

    let mut r = rng(9);
    let docs: Vec<String> = (0..50).map(|i| format!("d{i}")).collect();
    let (mut lists, mut golds) = (Vec::new(), Vec::new());
    for _ in 0..100 {
        let mut list = docs.clone();
        list.shuffle(&mut r);
        list.truncate(r.random_range(5..=30));
        let mut g = docs.clone();
        g.shuffle(&mut r);
        g.truncate(r.random_range(1..=4));
        lists.push(list);
        golds.push(g);
    }
    let (mut rr_sum, mut recall_sum) = (0.0, 0.0);
    for (list, g) in lists.iter().zip(&golds) {
        let gs: HashSet<&String> = g.iter().collect();
        if let Some(pos) = list.iter().position(|d| gs.contains(d)) {
            rr_sum += 1.0 / (pos + 1) as f64;
        }
        recall_sum += list.iter().take(10).filter(|d| gs.contains(d)).count() as f64 / gs.len() as f64;
    }
    let (oracle_mrr, oracle_recall) = (rr_sum / 100.0, recall_sum / 100.0);
    let got_mrr = mrr(&lists, &golds).unwrap();
    let got_recall = recall_at_k(&lists, &golds, 10).unwrap();
    let random_ok = got_mrr == oracle_mrr && got_recall == oracle_recall;

    let pass = hand_ok && random_ok;
    report(
        9,
        pass,
        &format!("mrr([1,2,4]) = {m:.9}; random qrels mrr {got_mrr} vs {oracle_mrr}, recall@10 {got_recall} vs {oracle_recall}"),
    );
    assert!(pass);
}

#[test]
fn criterion_10_quantized_storage_size_and_fidelity() {
    // Byte accounting on serialized index files.
    let embedder = HashEmbedder::new(128, 0);
    let docs: Vec<Document> = (0..40)
        .map(|i| Document {
            id: format!("doc{i}"),
            title: String::new(),
            text: format!("document number {i} talks about topic {} and item {}", i % 7, i * 13),
            source: String::new(),
        })
        .collect();
    let float = build_index(&docs, &embedder, IndexConfig::default()).unwrap();
    let quant = build_index(&docs, &embedder, IndexConfig { quantized: true, ..IndexConfig::default() }).unwrap();
    let block_len = |bytes: &[u8]| {
        let header = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        bytes.len() - (4 + 1 + 4 + header + 4)
    };
    let (n, d) = (float.len(), float.dim());
    let float_block = block_len(&write_index(&float).unwrap());
    let quant_block = block_len(&write_index(&quant).unwrap());
    // int8 components take a quarter of the f32 components; each row also
    // carries one f32 scale.
    let component_bytes_float = float_block;
    let component_bytes_quant = quant_block - 4 * n;
    let accounting_ok = float_block == 4 * n * d && quant_block == n * (d + 4) && component_bytes_float == 4 * component_bytes_quant;

    // Top-10 overlap on a random 10k bank.
    let (rows_n, dim, k) = (10_000, 64, 10);
    let mut r = rng(10);
    let rows: Vec<Vec<f64>> = (0..rows_n).map(|_| uniform_vec(&mut r, dim, 1.0)).collect();
    let float_bank = MemoryBank::new(ids(rows_n), rows.clone()).unwrap();
    let quant_bank = MemoryBank::quantized(ids(rows_n), rows.iter().map(|v| quantize_int8(v)).collect()).unwrap();
    let proj = HopfieldProjections::identity(dim);
    let mut overlap = 0usize;
    for _ in 0..100 {
        let q = uniform_vec(&mut r, dim, 1.0);
        let a: HashSet<String> = retrieve_top_k(&q, &float_bank, &proj, k).unwrap().into_iter().map(|h| h.id).collect();
        overlap += retrieve_top_k(&q, &quant_bank, &proj, k).unwrap().iter().filter(|h| a.contains(&h.id)).count();
    }
    let mean_overlap = overlap as f64 / 100.0;

    let pass = accounting_ok && mean_overlap >= 9.0;
    report(
        10,
        pass,
        &format!(
            "float block {float_block} B, int8 block {quant_block} B ({n} rows x {d} dims): component bytes {}x smaller, \
             whole block {:.3}x; mean top-10 overlap {mean_overlap:.2}/10 (need 9)",
            component_bytes_float / component_bytes_quant,
            float_block as f64 / quant_block as f64
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_11_segmented_retrieval_speedup() {
    let (n, d, k, queries, warmup) = (100_000, 128, 10, 40, 10);
    let mut r = rng(11);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(&mut r, d, 1.0)).collect();
    let bank = MemoryBank::new(ids(n), rows).unwrap();
    let proj = HopfieldProjections::identity(d);
    let qs: Vec<Vec<f64>> = (0..queries).map(|_| uniform_vec(&mut r, d, 1.0)).collect();
    let time = |segments: usize| {
        for q in qs.iter().cycle().take(warmup) {
            segmented_retrieve(q, &bank, &proj, segments, k).unwrap();
        }
        let mut total = 0.0;
        let mut lists = Vec::new();
        for q in &qs {
            let t = Instant::now();
            let hits = segmented_retrieve(q, &bank, &proj, segments, k).unwrap();
            total += t.elapsed().as_secs_f64();
            lists.push(hits.into_iter().map(|h| h.id).collect::<Vec<_>>());
        }
        (total / queries as f64, lists)
    };
    let (one, one_ids) = time(1);
    let (eight, eight_ids) = time(8);
    let speedup = one / eight;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let identical = one_ids == eight_ids;
    let pass = threads >= 4 && identical && speedup >= 2.0;
    report(
        11,
        pass,
        &format!(
            "{threads} hardware thread(s) (need 4); mean {:.3} ms at 1 segment, {:.3} ms at 8; speedup {speedup:.2}x (need 2x); \
             identical results: {identical}",
            one * 1e3,
            eight * 1e3
        ),
    );
    assert!(identical, "segmented results differ from single-segment results");
    assert!(
        pass,
        "criterion needs at least 4 hardware threads and a 2x speedup; measured {speedup:.2}x on {threads} thread(s)"
    );
}

fn convcoa(args: &[&str], stdin: &str, cwd: &Path) -> (bool, Vec<u8>, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_convcoa"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CONVCOA_LLM_ENDPOINT")
        .env_remove("CONVCOA_SEARCH_ENDPOINT")
        .env_remove("CONVCOA_EMBEDDING_ENDPOINT")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    (out.status.success(), out.stdout, String::from_utf8_lossy(&out.stderr).into_owned())
}

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn criterion_12_chat_is_deterministic_and_carries_context() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (ok, _, err) = convcoa(&["ingest", &fixture("corpus.jsonl"), "--out", "index.ccoa"], "", root);
    assert!(ok, "ingest failed: {err}");
    let questions = std::fs::read_to_string(fixture("three_turns.txt")).unwrap();
    let script = fixture("three_turns.script.json");
    let mut runs = Vec::new();
    for run in 0..3 {
        let out_dir = format!("run{run}");
        let (ok, stdout, err) = convcoa(
            &["chat", "--index", "index.ccoa", "--mock", &script, "--conversation", "c1", "--out-dir", &out_dir],
            &questions,
            root,
        );
        assert!(ok, "chat run {run} failed: {err}");
        let transcript = std::fs::read(root.join(&out_dir).join("c1.transcript.jsonl")).unwrap();
        let cks = std::fs::read(root.join(&out_dir).join("c1.cks.json")).unwrap();
        runs.push((stdout, transcript, cks));
    }
    let identical = runs.iter().all(|r| *r == runs[0]);

    let (stdout, transcript, cks_bytes) = &runs[0];
    let answers = String::from_utf8_lossy(stdout).lines().count();
    let cks = ContextualKnowledgeSet::parse(cks_bytes).unwrap();
    let round_one = ContextualKnowledgeSet::new().append_round(cks.rounds()[0].clone()).unwrap();
    let prompts: Vec<serde_json::Value> = String::from_utf8_lossy(transcript)
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|e| e["kind"] == "prompt")
        .collect();
    let second = &prompts[1]["payload"];
    let text = second["text"].as_str().unwrap_or_default();
    let normal_stage = second["stage"] == "normal" && text.starts_with("Given a [Contextual Knowledge Set]");
    let carries_round_one = text.contains(&round_one.render_for_prompt())
        && text.contains(&cks.rounds()[0].answer)
        && !cks.rounds()[0].answer.is_empty();

    let pass = identical && answers == 3 && cks.len() == 3 && prompts.len() == 3 && normal_stage && carries_round_one;
    report(
        12,
        pass,
        &format!(
            "3 runs bit-identical: {identical}; {answers} answers, {} CKS rounds; turn-2 normal-stage prompt: {normal_stage}, \
             contains round-1 CKS: {carries_round_one}",
            cks.len()
        ),
    );
    assert!(pass);
}
