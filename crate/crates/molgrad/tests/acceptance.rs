//! Acceptance suite: one test per release criterion, each ending in a
//! single `ACCEPTANCE <name> ... PASS` line. Every numeric criterion is
//! checked against an independent oracle — central finite differences for
//! gradients, scalar loops and closed-form products for the relevance
//! rollout, hand arithmetic for the metrics.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use molgrad::cli::run_with_args;
use molgrad::data::{
    load_csv, summarize, CsvSchema, SoluRecord, SplitMode, SplitSpec, Splits,
};
use molgrad::encoder::{
    forward_with_attention_override, loss_and_gradients, predict_with_gradients,
    save_checkpoint, Model, ModelConfig,
};
use molgrad::relevance::{aggregate, extract_reg, head_average};
use molgrad::smiles::{parse, prepare_input, tokenize, Vocabulary};
use molgrad::tensor::Tensor;
use molgrad::training::{evaluate, run_suite, train, SuiteMode, TrainConfig};

const FD_STEP: f64 = 1e-5;

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets")
}

/// Criterion: on a seeded 2-layer, 2-head model and a 10-token input, every
/// parameter gradient and every dy/dA entry matches central finite
/// differences (h = 1e-5) within relative error 1e-3 (absolute floor 1e-6),
/// in under 60 seconds.
#[test]
fn acceptance_gradient_suite() {
    let started = Instant::now();
    let vocab = Vocabulary::base();
    let mut config = ModelConfig::desk(vocab.len());
    config.num_layers = 2;
    config.num_heads = 2;
    config.head_dim = 4;
    config.ffn_dim = 16;
    let model = Model::init(config, vocab, 11).expect("init");

    // 9 raw tokens + <REG> = a 10-token input.
    let seq = prepare_input(&tokenize("CCCC(=O)O").expect("tokenize"), None).expect("prepare");
    assert_eq!(seq.len(), 10, "input must be 10 tokens");

    let target = 0.37;
    let grads = loss_and_gradients(&model, &seq, None, target, 1.0).expect("gradients");

    // Every entry of every parameter tensor against a central difference of
    // the loss.
    let names: Vec<(String, usize)> = model
        .named_parameters()
        .iter()
        .map(|(n, t)| (n.clone(), t.numel()))
        .collect();
    let mut checked = 0usize;
    for (pi, (name, numel)) in names.iter().enumerate() {
        for k in 0..*numel {
            let mut plus = model.clone();
            plus.parameters_mut()[pi].data_mut()[k] += FD_STEP;
            let mut minus = model.clone();
            minus.parameters_mut()[pi].data_mut()[k] -= FD_STEP;
            let lp = loss_and_gradients(&plus, &seq, None, target, 1.0).expect("fd+").loss;
            let lm = loss_and_gradients(&minus, &seq, None, target, 1.0).expect("fd-").loss;
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let analytic = grads.parameter_gradients[pi].data()[k];
            assert!(
                common::fd_close(analytic, numeric),
                "{name}[{k}]: analytic {analytic:.6e} vs finite difference {numeric:.6e}"
            );
            checked += 1;
        }
    }

    // Every dy/dA entry: freeze attention up to layer l at the recorded
    // values, bump one entry, and let the rest of the network respond.
    let (_, record) = predict_with_gradients(&model, &seq, None).expect("record");
    let t = record.token_count();
    let mut checked_attn = 0usize;
    for layer in 0..record.num_layers() {
        let grad = record.gradient(layer).expect("recorded gradient");
        for h in 0..record.attention(layer).shape()[0] {
            for i in 0..t {
                for j in 0..t {
                    let mut prefix: Vec<Tensor> =
                        (0..=layer).map(|l| record.attention(l).clone()).collect();
                    let center = prefix[layer].at3(h, i, j);
                    prefix[layer].set3(h, i, j, center + FD_STEP);
                    let yp = forward_with_attention_override(&model, &seq, None, &prefix)
                        .expect("fd+");
                    prefix[layer].set3(h, i, j, center - FD_STEP);
                    let ym = forward_with_attention_override(&model, &seq, None, &prefix)
                        .expect("fd-");
                    let numeric = (yp - ym) / (2.0 * FD_STEP);
                    let analytic = grad.at3(h, i, j);
                    assert!(
                        common::fd_close(analytic, numeric),
                        "dy/dA layer {layer} head {h} [{i},{j}]: \
                         analytic {analytic:.6e} vs finite difference {numeric:.6e}"
                    );
                    checked_attn += 1;
                }
            }
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "suite took {elapsed:?}");
    println!(
        "ACCEPTANCE gradient_suite ({checked} parameter entries, \
         {checked_attn} attention entries, {elapsed:?}) ... PASS"
    );
}

/// One random rollout case: `t` in 2..=8, 1..=4 layers of nonnegative
/// averaged attention with a sprinkling of exact zeros.
fn random_case(rng: &mut ChaCha8Rng) -> (usize, Vec<Tensor>) {
    let t = rng.random_range(2..=8usize);
    let layers = rng.random_range(1..=4usize);
    let mats = (0..layers)
        .map(|_| {
            let mut m = Tensor::zeros(vec![t, t]);
            for r in 0..t {
                for c in 0..t {
                    let v: f64 = rng.random_range(0.0..1.0);
                    m.set2(r, c, if v < 0.2 { 0.0 } else { v });
                }
            }
            m
        })
        .collect();
    (t, mats)
}

/// Scalar-loop reference for the rollout `R <- R + A R`, identity start.
fn scalar_rollout(layers: &[Tensor], t: usize) -> Vec<f64> {
    let mut r = vec![0.0; t * t];
    for i in 0..t {
        r[i * t + i] = 1.0;
    }
    for a in layers {
        let mut next = r.clone();
        for i in 0..t {
            for j in 0..t {
                let mut acc = 0.0;
                for k in 0..t {
                    acc += a.at2(i, k) * r[k * t + j];
                }
                next[i * t + j] += acc;
            }
        }
        r = next;
    }
    r
}

/// Criterion: over 100 random cases, `aggregate` equals both the unrolled
/// `(I + A_L) ... (I + A_1)` product and a scalar-loop reference within
/// 1e-12, and `head_average` equals its scalar reference within 1e-12.
#[test]
fn acceptance_relevance_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let (t, mats) = random_case(&mut rng);
        let r = aggregate(&mats, t).expect("aggregate");

        // Oracle 1: matrix product of (I + A) factors.
        let mut product = Tensor::eye(t);
        for a in &mats {
            product = Tensor::eye(t).add(a).expect("add").matmul(&product).expect("matmul");
        }
        let d1 = common::max_abs_diff(r.matrix().data(), product.data());
        assert!(d1 <= 1e-12, "case {case}: product oracle differs by {d1:.3e}");

        // Oracle 2: plain scalar loops, no tensor code at all.
        let loops = scalar_rollout(&mats, t);
        let d2 = common::max_abs_diff(r.matrix().data(), &loops);
        assert!(d2 <= 1e-12, "case {case}: scalar oracle differs by {d2:.3e}");

        // head_average against its scalar reference: random positive
        // attention, mixed-sign gradients, clamp before the head mean.
        let heads = rng.random_range(1..=4usize);
        let mut a = Tensor::zeros(vec![heads, t, t]);
        let mut g = Tensor::zeros(vec![heads, t, t]);
        for h in 0..heads {
            for i in 0..t {
                for j in 0..t {
                    a.set3(h, i, j, rng.random_range(0.0..1.0));
                    g.set3(h, i, j, rng.random_range(-1.0..1.0));
                }
            }
        }
        let averaged = head_average(&a, &g).expect("head_average");
        let mut reference = vec![0.0; t * t];
        for (i, slot) in reference.iter_mut().enumerate() {
            let (row, col) = (i / t, i % t);
            let mut acc = 0.0;
            for h in 0..heads {
                acc += (a.at3(h, row, col) * g.at3(h, row, col)).max(0.0);
            }
            *slot = acc / heads as f64;
        }
        let d3 = common::max_abs_diff(averaged.data(), &reference);
        assert!(d3 <= 1e-12, "case {case}: head_average differs by {d3:.3e}");
    }
    println!("ACCEPTANCE relevance_oracle (100 random cases) ... PASS");
}

/// Criterion: zero gradients give exactly `R = I`; a single uniform layer
/// gives equal extracted relevance for every token; `R - I` is nonnegative
/// and `R` is entrywise monotone in the layer count on random suites.
#[test]
fn acceptance_equation_identities() {
    // Zero gradients: A (x) 0 clamps to zero, so every update vanishes.
    let t = 7;
    let heads = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut a = Tensor::zeros(vec![heads, t, t]);
    for h in 0..heads {
        for i in 0..t {
            for j in 0..t {
                a.set3(h, i, j, rng.random_range(0.0..1.0));
            }
        }
    }
    let zero_bar = head_average(&a, &Tensor::zeros(vec![heads, t, t])).expect("head_average");
    let r = aggregate(&[zero_bar.clone(), zero_bar], t).expect("aggregate");
    assert_eq!(r.matrix().data(), Tensor::eye(t).data(), "zero gradients must leave R = I");

    // One uniform layer: every non-<REG> token gets the same relevance.
    let seq = prepare_input(&tokenize("CCCCC").expect("tokenize"), None).expect("prepare");
    assert_eq!(seq.len(), 6);
    let uniform = Tensor::filled(vec![6, 6], 0.25);
    let r = aggregate(&[uniform], 6).expect("aggregate");
    let tokens = extract_reg(&r, &seq).expect("extract");
    assert_eq!(tokens.len(), 5);
    for tok in &tokens {
        assert_eq!(tok.raw_relevance, tokens[0].raw_relevance, "uniform layer must tie");
    }

    // Random suites: R - I >= 0, and every entry is monotone in the number
    // of layers rolled in.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..100 {
        let (t, mats) = random_case(&mut rng);
        let mut previous = Tensor::eye(t);
        for upto in 1..=mats.len() {
            let r = aggregate(&mats[..upto], t).expect("aggregate");
            let minus_identity = r.minus_identity();
            assert!(
                minus_identity.data().iter().all(|&v| v >= 0.0),
                "case {case}: R - I went negative at layer {upto}"
            );
            let grew = r
                .matrix()
                .data()
                .iter()
                .zip(previous.data())
                .all(|(now, before)| now >= before);
            assert!(grew, "case {case}: R shrank when adding layer {upto}");
            previous = r.matrix().clone();
        }
    }
    println!("ACCEPTANCE equation_identities ... PASS");
}

/// Criterion: all 200 bundled molecules round-trip the tokenizer exactly
/// and parse with atom counts equal to the atom-token counts; the three
/// reference molecules match their documented structure.
#[test]
fn acceptance_tokenizer_parser_corpus() {
    let corpus = fs::read_to_string(assets().join("corpus_200.smi")).expect("read corpus");
    let lines: Vec<&str> = corpus.lines().filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(lines.len(), 200, "corpus must hold exactly 200 molecules");

    for smiles in &lines {
        let seq = tokenize(smiles).unwrap_or_else(|e| panic!("tokenize {smiles}: {e}"));
        assert_eq!(&seq.to_smiles(), smiles, "round-trip must rebuild the input");
        let graph = parse(&seq).unwrap_or_else(|e| panic!("parse {smiles}: {e}"));
        let atom_tokens = seq.tokens().iter().filter(|t| t.kind.is_atom()).count();
        assert_eq!(
            graph.atom_count(),
            atom_tokens,
            "{smiles}: parser atoms must equal atom tokens"
        );
    }

    // The three reference molecules, with their documented expectations.
    for required in ["OCC(O)=O", "CCO", "CC12CC(C)(NC(=O)N1)NC(=O)N2"] {
        assert!(lines.contains(&required), "corpus must include {required}");
    }
    let glycolic = parse(&tokenize("OCC(O)=O").expect("tokenize")).expect("parse");
    assert_eq!(glycolic.atom_count(), 5);
    assert_eq!(glycolic.ring_count(), 0);
    assert_eq!(tokenize("OCC(O)=O").expect("tokenize").len(), 8);
    let ethanol = parse(&tokenize("CCO").expect("tokenize")).expect("parse");
    assert_eq!(ethanol.atom_count(), 3);
    let bicyclic = parse(&tokenize("CC12CC(C)(NC(=O)N1)NC(=O)N2").expect("tokenize"))
        .expect("parse");
    assert_eq!(bicyclic.atom_count(), 13);
    assert_eq!(bicyclic.ring_count(), 2);
    assert_eq!(bicyclic.bond_count(), 14);
    println!("ACCEPTANCE tokenizer_parser_corpus (200 molecules) ... PASS");
}

/// Criterion: a 32-sample overfit reaches train MAE < 0.1 in scaled units
/// within 2000 steps and five minutes, and identical seeds reproduce the
/// validation loss bit-for-bit (well under 1e-12) across five seeds.
#[test]
fn acceptance_training_sanity() {
    let started = Instant::now();
    let report =
        load_csv(&assets().join("aqueous_desk.csv"), &CsvSchema::aqueous()).expect("load");
    let sample: Vec<SoluRecord> = report.records.iter().take(32).cloned().collect();
    let splits = Splits {
        train: sample.clone(),
        val: sample.clone(),
        test: sample.clone(),
        spec: SplitSpec::new(SplitMode::Random, 0),
        filtered_out: 0,
    };

    let mut config = TrainConfig::aqueous();
    config.epochs = 120;
    config.batch_size = 8;
    config.learning_rate = 3e-3;
    let steps = splits.train.len().div_ceil(config.batch_size) * config.epochs;
    assert!(steps <= 2000, "overfit budget exceeded: {steps} steps");

    let outcome = train(&ModelConfig::desk(0), &config, &splits).expect("train");
    assert!(!outcome.diverged, "overfit run diverged");
    let eval = evaluate(&outcome.model, &splits.train).expect("evaluate");
    let (min, max) = outcome.model.label_scaler().expect("scaler");
    let scaled_mae = eval.mae / (max - min);
    assert!(
        scaled_mae < 0.1,
        "scaled train MAE {scaled_mae:.4} must drop below 0.1 ({} steps)",
        steps
    );

    // Determinism: five seeds, two identical runs each.
    let mut quick = TrainConfig::aqueous();
    quick.epochs = 3;
    quick.batch_size = 8;
    for seed in 0..5 {
        quick.model_seed = seed;
        quick.data_seed = seed;
        let first = train(&ModelConfig::desk(0), &quick, &splits).expect("first run");
        let second = train(&ModelConfig::desk(0), &quick, &splits).expect("second run");
        let diff = (first.best_val_loss - second.best_val_loss).abs();
        assert!(diff <= 1e-12, "seed {seed}: val loss differs by {diff:.3e}");
        for (a, b) in first.log.iter().zip(&second.log) {
            assert!(
                (a.val_loss - b.val_loss).abs() <= 1e-12,
                "seed {seed}: epoch {} val loss not reproducible",
                a.epoch
            );
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    println!(
        "ACCEPTANCE training_sanity (MAE {scaled_mae:.4} scaled after {steps} steps, \
         {elapsed:?}) ... PASS"
    );
}

/// Criterion: on the bundled 500+ molecule CSV with seeded 10% test splits,
/// the from-scratch model beats the mean predictor (test RMSE below the
/// test-label standard deviation) on every one of 5 data seeds; the summary
/// is reported as mean ± SE.
#[test]
fn acceptance_predictive_floor() {
    let report =
        load_csv(&assets().join("aqueous_desk.csv"), &CsvSchema::aqueous()).expect("load");
    assert!(report.records.len() >= 500, "dataset must hold at least 500 molecules");

    let mut config = TrainConfig::aqueous();
    config.epochs = 12;
    let outcome = run_suite(
        &ModelConfig::desk(0),
        &config,
        &report.records,
        &SplitSpec::new(SplitMode::Random, 0),
        &[0, 1, 2, 3, 4],
        SuiteMode::Data,
    )
    .expect("suite");

    for run in &outcome.runs {
        assert!(
            run.rmse < run.baseline_rmse,
            "seed {}: RMSE {:.3} must beat the mean predictor ({:.3})",
            run.seed,
            run.rmse,
            run.baseline_rmse
        );
    }
    let row = outcome.table_row("from-scratch (5 data seeds)").expect("row");
    println!("model  MAE  RMSE");
    println!("{row}");
    println!("ACCEPTANCE predictive_floor (5 seeds beat the mean predictor) ... PASS");
}

/// Criterion: explaining glycolic acid in ethanol at 298 K produces the
/// exact documented sequence, a valid relevance JSON with 12 token entries,
/// well-formed SVGs with one highlight per atom, and the `R - I` heatmap
/// panel, all in under 10 seconds.
#[test]
fn acceptance_end_to_end_explain() {
    let dir = tempfile::tempdir().expect("tempdir");
    let checkpoint = dir.path().join("checkpoint.bin");
    let vocab = Vocabulary::base();
    let mut config = ModelConfig::desk(vocab.len());
    config.use_temperature_feature = true;
    let mut model = Model::init(config, vocab, 7).expect("init");
    model.set_label_scaler(-5.0, 2.0);
    save_checkpoint(&model, &checkpoint).expect("save");

    let out_dir = dir.path().join("explain-out");
    let started = Instant::now();
    let mut stdout = Vec::new();
    let code = run_with_args(
        [
            "molgrad",
            "explain",
            checkpoint.to_str().expect("utf8 path"),
            "OCC(O)=O",
            "--solvent",
            "CCO",
            "--temp",
            "298",
            "--out",
            out_dir.to_str().expect("utf8 path"),
        ],
        &mut stdout,
    );
    let elapsed = started.elapsed();
    assert_eq!(code, 0, "explain failed: {}", String::from_utf8_lossy(&stdout));
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");

    let printed = String::from_utf8(stdout).expect("utf8 stdout");
    assert!(
        printed.contains("sequence: <REG> O C C ( O ) = O <SEP> C C O"),
        "unexpected sequence in: {printed}"
    );

    // The JSON export: schema header, 12 token entries in order, both
    // molecules' atoms, the temperature that was passed.
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("relevance.json")).expect("read"))
            .expect("valid JSON");
    assert_eq!(report["schema_version"], 1);
    let tokens = report["report"]["tokens"].as_array().expect("tokens array");
    assert_eq!(tokens.len(), 12, "12 token entries after dropping <REG>");
    let texts: Vec<&str> = tokens.iter().map(|t| t["text"].as_str().expect("text")).collect();
    assert_eq!(texts, ["O", "C", "C", "(", "O", ")", "=", "O", "<SEP>", "C", "C", "O"]);
    assert_eq!(report["report"]["temperature"], 298.0);
    let atoms = report["report"]["atoms"].as_array().expect("atoms array");
    assert_eq!(atoms.len(), 5 + 3, "solute then solvent atoms");

    // SVGs: well-formed, one highlight circle per atom, R - I panel present.
    let solute_svg =
        fs::read_to_string(out_dir.join("molecule_solute.svg")).expect("solute svg");
    common::assert_well_formed(&solute_svg);
    assert_eq!(solute_svg.matches("class=\"highlight\"").count(), 5);
    let solvent_svg =
        fs::read_to_string(out_dir.join("molecule_solvent.svg")).expect("solvent svg");
    common::assert_well_formed(&solvent_svg);
    assert_eq!(solvent_svg.matches("class=\"highlight\"").count(), 3);
    let attention_svg = fs::read_to_string(out_dir.join("attention.svg")).expect("attention svg");
    common::assert_well_formed(&attention_svg);
    assert!(attention_svg.contains("relevance (R - I)"), "missing R - I panel");
    let tokens_svg = fs::read_to_string(out_dir.join("tokens.svg")).expect("tokens svg");
    common::assert_well_formed(&tokens_svg);

    println!("ACCEPTANCE end_to_end_explain ({elapsed:?}) ... PASS");
}

/// Criterion: the worked 5-run example summarizes to mean 0.600 and
/// SE 0.01/sqrt(10) (displayed 0.0032) within 1e-6.
#[test]
fn acceptance_metrics_arithmetic() {
    let summary = summarize(&[0.6, 0.61, 0.59, 0.60, 0.60]).expect("summarize");
    assert!((summary.mean - 0.600).abs() < 1e-6, "mean {:.7}", summary.mean);
    let hand = 0.01 / 10.0_f64.sqrt();
    assert!((summary.se - hand).abs() < 1e-6, "SE {:.7} vs hand {hand:.7}", summary.se);
    assert_eq!(summary.table_cell(), "0.600 (0.0032)");
    println!("ACCEPTANCE metrics_arithmetic (mean 0.600, SE 0.0032) ... PASS");
}
