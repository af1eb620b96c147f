//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! each, and exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lexforge::{checkpoint, dataset, toy, vocab_io};
use lexforge_core::data::{render_augmentation_prompt, render_test, render_train, tokenize_example};
use lexforge_core::eval::{compare_reports, EvalReport, TaskId};
use lexforge_core::generate::{answer, GenerationParams, Sampler, Strategy};
use lexforge_core::lora::merge_lora;
use lexforge_core::loss::{lft_loss, lft_loss_value, lpt_loss, lpt_loss_value};
use lexforge_core::model::{forward, forward_graph, GradMode, Mode};
use lexforge_core::tokenizer::train_bpe;
use lexforge_core::train::mean_masked_loss;
use lexforge_core::{
    Graph, InstructionRecord, LoraAdapters, LoraConfig, LoraTarget, ModelParameters, Stage, Subset, Tensor,
    TrainConfig, TransformerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Box<dyn FnOnce() -> Outcome>);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn factor<'a>(a: &'a mut LoraAdapters, name: &str, which: &str) -> &'a mut Tensor {
    let pair = a.factors_mut().get_mut(name).unwrap();
    if which == "a" {
        &mut pair.a
    } else {
        &mut pair.b
    }
}

fn gradient_check() -> Outcome {
    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let cfg = TransformerConfig {
        vocab_size: 64,
        context_length: 16,
        layers: 2,
        heads: 2,
        embed_dim: 32,
        mlp_hidden_dim: 64,
    };
    let base = ModelParameters::init(cfg, 3).unwrap();
    let mut adapters = LoraAdapters::new(&base, LoraConfig::lft(), Stage::Lft, 4).unwrap();
    // Non-zero B so both factors receive informative gradients.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in adapters.factors_mut().values_mut() {
        p.b = Tensor::normal(p.b.shape(), 0.1, &mut rng);
    }
    let tokens: Vec<u32> = (0..16).map(|i| (i * 37 % 61) as u32).collect();
    // Trailing padding exercises the attention mask.
    let valid: Vec<bool> = (0..16).map(|i| i < 13).collect();
    let index_set: Vec<usize> = (5..13).collect();
    let loss = |b: &ModelParameters, a: &LoraAdapters| -> f64 {
        let mut fw = forward_graph(b, Some(a), &tokens, Some(&valid), Mode::Eval, GradMode::None).unwrap();
        let l = lft_loss(&mut fw.graph, fw.logits, &tokens, &index_set).unwrap();
        fw.graph.value(l).data()[0]
    };
    let mut fw = forward_graph(&base, Some(&adapters), &tokens, Some(&valid), Mode::Eval, GradMode::All).unwrap();
    let l = lft_loss(&mut fw.graph, fw.logits, &tokens, &index_set).unwrap();
    fw.graph.backward(l).unwrap();

    let rel_err = |analytic: &Tensor, numeric: &[f64]| -> f64 {
        let diff = analytic.data().iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        diff / na.max(nn).max(1e-12)
    };
    let mut worst = (String::new(), 0.0f64);
    let mut groups = 0;
    for (name, g) in fw.param_grads() {
        let mut num = vec![0.0; g.len()];
        let mut p = base.clone();
        for (i, n) in num.iter_mut().enumerate() {
            let orig = p.get(&name).unwrap().data()[i];
            p.get_mut(&name).unwrap().data_mut()[i] = orig + STEP;
            let up = loss(&p, &adapters);
            p.get_mut(&name).unwrap().data_mut()[i] = orig - STEP;
            let down = loss(&p, &adapters);
            p.get_mut(&name).unwrap().data_mut()[i] = orig;
            *n = (up - down) / (2.0 * STEP);
        }
        let e = rel_err(&g, &num);
        groups += 1;
        if e > worst.1 {
            worst = (name.clone(), e);
        }
    }
    for (name, (ga, gb)) in fw.adapter_grads() {
        for (which, g) in [("a", ga), ("b", gb)] {
            let mut num = vec![0.0; g.len()];
            let mut a2 = adapters.clone();
            for (i, n) in num.iter_mut().enumerate() {
                let orig = factor(&mut a2, &name, which).data()[i];
                factor(&mut a2, &name, which).data_mut()[i] = orig + STEP;
                let up = loss(&base, &a2);
                factor(&mut a2, &name, which).data_mut()[i] = orig - STEP;
                let down = loss(&base, &a2);
                factor(&mut a2, &name, which).data_mut()[i] = orig;
                *n = (up - down) / (2.0 * STEP);
            }
            let e = rel_err(&g, &num);
            groups += 1;
            if e > worst.1 {
                worst = (format!("lora.{name}.{which}"), e);
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        worst.1 <= TOL && elapsed < Duration::from_secs(120) && groups == base.tensors().len() + 8,
        format!(
            "{groups} groups, worst relative error {:.2e} ({}) <= {TOL:e}, {:.1}s < 120s",
            worst.1,
            worst.0,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn loss_identities() -> Outcome {
    let mut worst_uniform = 0.0f64;
    for &v in &[2usize, 64, 1200, 32000] {
        let tokens: Vec<u32> = (0..9).map(|i| (i * 7 % v) as u32).collect();
        for fill in [0.0, 3.25, -40.0] {
            let logits = Tensor::filled(&[tokens.len(), v], fill);
            let l = lpt_loss_value(&logits, &tokens).unwrap();
            worst_uniform = worst_uniform.max((l - (v as f64).ln()).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for _ in 0..100 {
        let v = rng.random_range(2..300);
        let n = rng.random_range(2..40);
        let tokens: Vec<u32> = (0..n).map(|_| rng.random_range(0..v) as u32).collect();
        let scale = rng.random_range(0.1..20.0);
        let logits = Tensor::normal(&[n, v as usize], scale, &mut rng);
        let full: Vec<usize> = (1..n).collect();
        let mut g = Graph::new();
        let x = g.leaf(logits.clone(), true);
        let a = lpt_loss(&mut g, x, &tokens).unwrap();
        let b = lft_loss(&mut g, x, &tokens, &full).unwrap();
        let same_graph = g.value(a).data()[0].to_bits() == g.value(b).data()[0].to_bits();
        let same_value = lpt_loss_value(&logits, &tokens).unwrap().to_bits()
            == lft_loss_value(&logits, &tokens, &full).unwrap().to_bits();
        if !(same_graph && same_value) {
            mismatches += 1;
        }
    }
    check(
        worst_uniform <= 1e-6 && mismatches == 0,
        format!("uniform-logit |loss - ln V| max {worst_uniform:.1e} <= 1e-6; full-mask lft vs lpt: {mismatches}/100 bit mismatches"),
    )
}

// ---------------------------------------------------------------- 3

fn lora_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst = 0.0f64;
    let mut noop_failures = 0;
    for m in 0..20u64 {
        let heads = [1usize, 2, 4][rng.random_range(0..3)];
        let embed = heads * rng.random_range(2..6);
        let cfg = TransformerConfig {
            vocab_size: rng.random_range(8..40),
            context_length: rng.random_range(4..12),
            layers: rng.random_range(1..3),
            heads,
            embed_dim: embed,
            mlp_hidden_dim: rng.random_range(4..20),
        };
        let params = ModelParameters::init(cfg, m).unwrap();
        let lora = LoraConfig {
            rank: rng.random_range(1..=embed.min(4)),
            alpha: rng.random_range(0.5..32.0),
            dropout: 0.05,
            targets: vec![LoraTarget::Query, LoraTarget::Value],
        };
        let mut ad = LoraAdapters::new(&params, lora, Stage::Lpt, m + 100).unwrap();
        let n = rng.random_range(1..=cfg.context_length);
        let tokens: Vec<u32> = (0..n).map(|_| rng.random_range(0..cfg.vocab_size) as u32).collect();
        let plain = forward(&params, None, &tokens, Mode::Eval).unwrap();
        let zero = forward(&params, Some(&ad), &tokens, Mode::Eval).unwrap();
        if !plain.bit_eq(&zero) {
            noop_failures += 1;
        }
        for p in ad.factors_mut().values_mut() {
            p.b = Tensor::normal(p.b.shape(), 0.3, &mut rng);
        }
        let adapted = forward(&params, Some(&ad), &tokens, Mode::Eval).unwrap();
        let merged = merge_lora(&params, &ad).unwrap();
        let folded = forward(&merged, None, &tokens, Mode::Eval).unwrap();
        worst = worst.max(adapted.max_abs_diff(&folded));
    }
    let lpt = TrainConfig::lpt(0).lora;
    let lft = TrainConfig::lft(0).lora;
    let qv = vec![LoraTarget::Query, LoraTarget::Value];
    let defaults_ok = (lpt.rank, lpt.alpha, lpt.dropout, &lpt.targets) == (16, 32.0, 0.05, &qv)
        && (lft.rank, lft.alpha, lft.dropout, &lft.targets) == (8, 16.0, 0.05, &qv)
        && TrainConfig::defaults_for(Stage::Lpt, 0).map(|c| c.lora) == Some(lpt.clone())
        && TrainConfig::defaults_for(Stage::Lft, 0).map(|c| c.lora) == Some(lft.clone())
        && lexforge::config::PipelineConfig::default().train(Stage::Lft) == TrainConfig::lft(0);
    check(
        noop_failures == 0 && worst <= 1e-9 && defaults_ok,
        format!(
            "zero-B no-op failures {noop_failures}/20; merge vs adapter max |diff| {worst:.1e} <= 1e-9; stage defaults {}",
            if defaults_ok { "ok" } else { "WRONG" }
        ),
    )
}

// ---------------------------------------------------------------- 4

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn template_fidelity() -> Outcome {
    let instruction = "请问我向借钱人要钱多次未果，向法院起诉，法院多久才立案";
    let output = "起诉的当日 ，法院就会立案的。";
    let record = InstructionRecord::new(instruction, output, Subset::A).unwrap();
    let test = render_test(instruction).unwrap() == golden("render_test.txt");
    let train = render_train(instruction, output).unwrap().text == golden("render_train.txt");
    let aug = render_augmentation_prompt(&record).unwrap() == golden("augment_prompt.txt");
    let space = golden("render_test.txt").ends_with("### Response: \n");
    check(
        test && train && aug && space,
        format!("render_test {test}, render_train {train}, augmentation prompt {aug}, `### Response: \\n` space {space}"),
    )
}

// ---------------------------------------------------------------- 5

const ALPHABET: &[&str] = &[
    "法", "院", "起", "诉", "的", "当", "日", "立", "案", "请", "问", "借", "款", "人", "合", "同", "，", "。", "？",
    "《", "》", "a", "b", "c", "x", "y", "1", "2", "0", " ", "\n", "-", "(", ")", "A", "Z", "é", "€", "🙂",
];

fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
    loop {
        let n = rng.random_range(1..=max);
        let s: String = (0..n).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect();
        if !s.trim().is_empty() {
            return s;
        }
    }
}

fn mask_construction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let corpus: Vec<String> = (0..200).map(|_| random_text(&mut rng, 80)).collect();
    let vocab = train_bpe(&corpus, 400).unwrap();
    let mut bad = 0;
    for _ in 0..1000 {
        let subset = [Subset::A, Subset::B, Subset::C][rng.random_range(0..3)];
        let r = InstructionRecord::new(random_text(&mut rng, 30), random_text(&mut rng, 30), subset).unwrap();
        let ex = tokenize_example(&r, &vocab, usize::MAX).unwrap();
        let prompt_len = 1 + vocab.encode(&render_test(&r.instruction).unwrap()).len();
        let ids = ex.tokens.ids();
        let (last, body) = ex.output_index_set.split_last().unwrap();
        let out_ids: Vec<u32> = body.iter().map(|&i| ids[i]).collect();
        let ok = vocab.decode(&out_ids).unwrap() == r.output
            && ids[*last] == vocab.eos()
            && *last == ids.len() - 1
            && ex.output_index_set.iter().all(|&i| i >= prompt_len)
            && ex.output_index_set.windows(2).all(|w| w[1] == w[0] + 1);
        if !ok {
            bad += 1;
        }
    }
    check(bad == 0, format!("{bad}/1000 records with a wrong output mask"))
}

// ---------------------------------------------------------------- 6 and 7

fn cli(out: &Path, args: &[&str]) -> std::process::Output {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/toy.toml");
    let output = Command::new(env!("CARGO_BIN_EXE_lexforge"))
        .arg("--config")
        .arg(&config)
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("lexforge binary runs");
    assert!(
        output.status.success(),
        "lexforge {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

/// The toy pipeline through the command line: data, tokenizer, both stages
/// and an evaluation on the bundled tasks.
fn run_pipeline(dir: &Path) -> Duration {
    let start = Instant::now();
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    cli(dir, &["data", "toy"]);
    cli(dir, &["tokenizer", "train", "--corpus", &p("corpus.txt"), "--dataset", &p("instructions.jsonl")]);
    cli(dir, &["data", "build", "--input", &p("instructions.jsonl")]);
    cli(dir, &["train", "lpt", "--corpus", &p("corpus.txt"), "--vocab", &p("vocab.txt")]);
    cli(
        dir,
        &["train", "lft", "--from-lpt", &p("lpt.ckpt"), "--dataset", &p("dataset.jsonl"), "--vocab", &p("vocab.txt")],
    );
    start.elapsed()
}

fn overfit(dir: &Path) -> Outcome {
    let elapsed = run_pipeline(dir);
    let vocab = vocab_io::load(&dir.join("vocab.txt")).unwrap();
    let ckpt = checkpoint::load(&dir.join("lft.ckpt")).unwrap();
    let records = dataset::read_records(&dir.join("dataset.jsonl")).unwrap();
    let examples: Vec<_> = records
        .iter()
        .map(|r| tokenize_example(r, &vocab, ckpt.params.config().context_length).unwrap())
        .collect();
    let loss = mean_masked_loss(&ckpt.params, ckpt.adapters.as_ref(), &examples).unwrap();
    let gen = GenerationParams::greedy(64);
    let exact = records
        .iter()
        .filter(|r| answer((&ckpt).into(), &vocab, &r.instruction, &gen).as_deref() == Ok(r.output.as_str()))
        .count();
    let size: usize = toy::corpus(1, 200_000).iter().map(|d| d.len() + 1).sum();
    check(
        records.len() == 32 && ckpt.step <= 200 && loss < 0.1 && exact == 32 && elapsed < Duration::from_secs(600),
        format!(
            "corpus {size} bytes, {} steps, mean masked loss {loss:.4} < 0.1, greedy exact {exact}/{}, {:.1}s < 600s",
            ckpt.step,
            records.len(),
            elapsed.as_secs_f64()
        ),
    )
}

const ARTIFACTS: &[&str] = &[
    "corpus.txt",
    "instructions.jsonl",
    "vocab.txt",
    "dataset.jsonl",
    "dataset_report.json",
    "lpt.ckpt",
    "lpt_report.json",
    "lft.ckpt",
    "lft_report.json",
    "report.txt",
    "report.jsonl",
    "predictions.jsonl",
];

fn evaluate(dir: &Path) {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    cli(dir, &["eval", "--checkpoint", &p("lft.ckpt"), "--vocab", &p("vocab.txt"), "--model-name", "toy"]);
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    evaluate(first);
    run_pipeline(second);
    evaluate(second);
    let differing: Vec<&str> = ARTIFACTS
        .iter()
        .copied()
        .filter(|name| std::fs::read(first.join(name)).ok() != std::fs::read(second.join(name)).ok())
        .collect();
    let a = checkpoint::load(&first.join("lft.ckpt")).unwrap();
    let b = checkpoint::load(&second.join("lft.ckpt")).unwrap();
    check(
        differing.is_empty() && a.bit_eq(&b),
        format!("{} artifacts compared, differing: {differing:?}", ARTIFACTS.len()),
    )
}

// ---------------------------------------------------------------- 8

fn table_plumbing() -> Outcome {
    let rows: [(&str, [f64; 8], f64); 4] = [
        ("GPT-3.5 Turbo", [29.5, 31.3, 35.5, 78.7, 76.8, 27.4, 61.2, 17.4], 44.7),
        ("GPT-4", [52.5, 27.5, 42.0, 82.6, 81.9, 48.6, 77.6, 19.6], 54.0),
        ("LLaMA", [1.0, 7.5, 7.0, 41.3, 54.2, 0.2, 14.4, 7.8], 16.7),
        ("adapted-7b", [0.2, 11.0, 15.7, 42.4, 40.8, 6.2, 15.4, 7.6], 17.4),
    ];
    let ids: Vec<TaskId> = TaskId::all().collect();
    let reports: Vec<EvalReport> = rows
        .iter()
        .map(|(m, s, _)| EvalReport::from_scores(*m, &ids.iter().copied().zip(s.iter().copied()).collect::<Vec<_>>()))
        .collect();
    // Round trip through the report file format as well.
    let reports = lexforge::report::parse_reports(&lexforge::report::reports_to_jsonl(&reports)).unwrap();
    let mut details = Vec::new();
    let mut ok = true;
    for (r, (_, _, printed)) in reports.iter().zip(&rows) {
        let d = (r.average() - printed).abs();
        ok &= d <= 0.05 + 1e-12;
        details.push(format!("{} {:.1}", r.model, r.average()));
    }
    let table = compare_reports(&reports, &["LLaMA", "adapted-7b"]);
    let bold = |model: &str| -> Vec<String> {
        let row = table.rows.iter().find(|r| r.model == model).unwrap();
        let mut cols: Vec<String> = table
            .columns
            .iter()
            .zip(&row.cells)
            .filter(|(_, c)| c.is_some_and(|c| c.bold))
            .map(|(id, _)| id.to_string())
            .collect();
        if row.average.bold {
            cols.push("Avg.".into());
        }
        cols
    };
    let expected_adapted = ["#2", "#3", "#4", "#6", "#7", "Avg."];
    let expected_llama = ["#1", "#5", "#8"];
    let closed_plain = ["GPT-3.5 Turbo", "GPT-4"].iter().all(|m| bold(m).is_empty());
    let pattern = bold("adapted-7b") == expected_adapted && bold("LLaMA") == expected_llama && closed_plain;
    check(
        ok && pattern,
        format!("averages [{}] within 0.05; bolding {}", details.join(", "), if pattern { "matches" } else { "DIFFERS" }),
    )
}

// ---------------------------------------------------------------- 9

fn mixed_corpus(seed: u64, bytes: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["court", "contract", "the", "of", "Article", "plaintiff", "2023", "No.", "RMB", "appeal"];
    let mut docs = Vec::new();
    let mut total = 0;
    while total < bytes {
        let mut doc = String::new();
        for _ in 0..rng.random_range(20..120) {
            match rng.random_range(0..10) {
                0..=4 => doc.push(char::from_u32(rng.random_range(0x4E00..0x9FA6)).unwrap()),
                5 => doc.push_str(ALPHABET[rng.random_range(0..ALPHABET.len())]),
                6 | 7 => {
                    doc.push_str(words[rng.random_range(0..words.len())]);
                    doc.push(' ');
                }
                8 => doc.push_str(["，", "。", "；", "：", "、"][rng.random_range(0..5)]),
                _ => doc.push(char::from(rng.random_range(0x20u8..0x7F))),
            }
        }
        total += doc.len();
        docs.push(doc);
    }
    docs
}

fn tokenizer_round_trip() -> Outcome {
    let docs = mixed_corpus(9, 1 << 20);
    let bytes: usize = docs.iter().map(String::len).sum();
    let vocab = train_bpe(&docs, 800).unwrap();
    let failures = docs
        .iter()
        .filter(|d| vocab.decode(&vocab.encode(d)).as_deref() != Ok(d.as_str()))
        .count();
    let again = train_bpe(&docs, 800).unwrap();
    let reloaded = vocab_io::from_text(&vocab_io::to_text(&vocab)).unwrap();
    let same = vocab.merges() == again.merges() && reloaded.merges() == vocab.merges();
    check(
        bytes >= 1 << 20 && failures == 0 && same,
        format!(
            "{bytes} bytes in {} documents, {failures} round-trip failures, {} merges identical on retrain: {same}",
            docs.len(),
            vocab.merges().len()
        ),
    )
}

// ---------------------------------------------------------------- 10

fn sampling_distribution() -> Outcome {
    const DRAWS: usize = 10_000;
    let logits = [1.2, -0.3, 0.0, 2.1, 0.7, -1.0, 1.5, 0.2];
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let probs: Vec<f64> = logits.iter().map(|l| (l - max).exp() / z).collect();
    let mut sampler = Sampler::new(Strategy::TopP { p: 1.0, temperature: 1.0 }, 77);
    let mut counts = vec![0usize; logits.len()];
    for _ in 0..DRAWS {
        counts[sampler.sample(&logits, &[])] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(&probs)
        .map(|(&c, p)| {
            let e = p * DRAWS as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let df = (logits.len() - 1) as f64;
    let critical = ChiSquared::new(df).unwrap().inverse_cdf(1.0 - 0.001);
    check(
        stat < critical,
        format!("chi-square {stat:.2} < critical {critical:.2} (df {df}, alpha 0.001, {DRAWS} draws)"),
    )
}

fn main() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let (d1, d2): (PathBuf, PathBuf) = (first.path().into(), second.path().into());
    let criteria: Vec<Criterion> = vec![
        ("gradient correctness", Box::new(gradient_check)),
        ("loss identities", Box::new(loss_identities)),
        ("LoRA invariants", Box::new(lora_invariants)),
        ("template byte-fidelity", Box::new(template_fidelity)),
        ("mask construction", Box::new(mask_construction)),
        ("end-to-end overfit", Box::new({
            let d1 = d1.clone();
            move || overfit(&d1)
        })),
        ("determinism", Box::new(move || determinism(&d1, &d2))),
        ("table plumbing", Box::new(table_plumbing)),
        ("tokenizer round trip", Box::new(tokenizer_round_trip)),
        ("sampling correctness", Box::new(sampling_distribution)),
    ];
    let mut failed = 0;
    for (n, (name, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("criterion {:>2} PASS {name}: {d} [{secs:.1}s]", n + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {d} [{secs:.1}s]", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
