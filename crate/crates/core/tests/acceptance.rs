//! End-to-end acceptance run. One driver executes every criterion in order,
//! prints a PASS/FAIL line for each and exits non-zero if any failed. It is
//! a plain binary (no test harness) so the lines show in `cargo test` output.
//!
//! The expected values here come from oracles written in this file (brute
//! force counting, finite differences, nearest centroids), never from the
//! code under test.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3, Array5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use scenefuse::clients::{StubBackbone, Taxonomy};
use scenefuse::datamodel::{load_manifest, Split};
use scenefuse::eval::{confusion, metrics};
use scenefuse::fusion::{
    build_model, early_fuse, joint_fuse, late_fuse, softmax_cross_entropy, FusionMode, FusionModelConfig, Inputs, Mlp,
    ModalityInput,
};
use scenefuse::ingest::FrameSequence;
use scenefuse::nn::{Activation, ConvLstm, Dense, Lstm, Module};
use scenefuse::pipeline::FeatureStore;
use scenefuse::synth::{self, SynthSpec};
use scenefuse::textfeat::TextKind;
use scenefuse::train::{cross_entropy, FeatureSource, LossInputs};
use scenefuse::visfeat::{sum_descriptors, VisualKind};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["scenefuse"];
    full.extend_from_slice(args);
    let code = scenefuse::cli::run(full, &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&err).into_owned())
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -rng.random_range(1e-9f64..1.0).ln()).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / z).collect()
}

// ---------------------------------------------------------------- 1

fn fusion_algebra() -> Outcome {
    check(early_fuse(&[1, 2, 3], &[4, 5]) == vec![1, 4, 2, 5, 3, 0], || "early_fuse pads the shorter side".into())?;
    check(early_fuse::<i32>(&[], &[7]) == vec![0, 7], || "early_fuse with empty text".into())?;
    check(joint_fuse(&[1.0, 2.0], &[3.0, 4.0]).unwrap() == vec![1.0, 3.0, 2.0, 4.0], || {
        "joint_fuse interleaves".into()
    })?;
    check(joint_fuse(&[1.0, 2.0], &[3.0]).is_err(), || "joint_fuse accepted unequal lengths".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ties = 0;
    for case in 0..10_000 {
        let len_t = rng.random_range(0..40);
        let len_v = rng.random_range(0..40);
        let t: Vec<f64> = (0..len_t).map(|_| rng.random()).collect();
        let v: Vec<f64> = (0..len_v).map(|_| rng.random()).collect();
        let e = early_fuse(&t, &v);
        check(e.len() == 2 * len_t.max(len_v), || format!("case {case}: early length"))?;
        for i in 0..len_t.max(len_v) {
            check(e[2 * i] == t.get(i).copied().unwrap_or(0.0), || format!("case {case}: even slot {i}"))?;
            check(e[2 * i + 1] == v.get(i).copied().unwrap_or(0.0), || format!("case {case}: odd slot {i}"))?;
        }

        if case % 4 == 0 {
            // Two classes share the maximum of the aggregate.
            let (a, b) = (rng.random_range(0..9), rng.random_range(0..9));
            let mut p = random_simplex(&mut rng, 9);
            p.iter_mut().for_each(|x| *x *= 0.5);
            p[a] = 0.75;
            p[b] = 0.75;
            let q = vec![0.25; 9];
            let (agg, w) = late_fuse(&p, &q);
            let (_, w_swapped) = late_fuse(&q, &p);
            ties += 1;
            check(w == a.min(b) && w_swapped == w, || format!("case {case}: tie between {a} and {b} went to {w}"))?;
            check(agg[a] == 1.0 && agg[b] == 1.0, || format!("case {case}: aggregate altered"))?;
            continue;
        }
        let p = random_simplex(&mut rng, 9);
        let q = random_simplex(&mut rng, 9);
        let (ab, wa) = late_fuse(&p, &q);
        let (ba, wb) = late_fuse(&q, &p);
        check(ab == ba && wa == wb, || format!("case {case}: late_fuse not symmetric"))?;
        let max = ab.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first = ab.iter().position(|&x| x == max).unwrap();
        check(wa == first, || format!("case {case}: winner {wa}, first maximum at {first}"))?;
        for i in 0..9 {
            check(ab[i] == p[i] + q[i], || format!("case {case}: aggregate[{i}]"))?;
        }
    }
    Ok(format!("10000 random cases, {ties} forced ties"))
}

// ---------------------------------------------------------------- 2

struct Counted {
    accuracy: f64,
    precision: Vec<f64>,
    recall: Vec<f64>,
    f1: Vec<f64>,
    macros: [f64; 3],
    weighted: [f64; 3],
}

/// Per-class TP/FP/FN tallied straight from the label lists.
fn brute_force(truth: &[usize], pred: &[usize], k: usize) -> Counted {
    let safe = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (mut precision, mut recall, mut f1, mut support) = (vec![], vec![], vec![], vec![]);
    let mut hits = 0u64;
    for c in 0..k {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (&t, &p) in truth.iter().zip(pred) {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        hits += tp;
        let p = safe(tp, tp + fp);
        let r = safe(tp, tp + fn_);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        support.push(tp + fn_);
    }
    let n = truth.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / k as f64;
    let wmean = |v: &[f64]| v.iter().zip(&support).map(|(x, &s)| x * s as f64).sum::<f64>() / n;
    Counted {
        accuracy: hits as f64 / n,
        macros: [mean(&precision), mean(&recall), mean(&f1)],
        weighted: [wmean(&precision), wmean(&recall), wmean(&f1)],
        precision,
        recall,
        f1,
    }
}

fn metrics_oracle() -> Outcome {
    let k = 9;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for case in 0..1000 {
        let n = rng.random_range(1..=500);
        // Some cases only use a few classes so empty rows and columns occur.
        let used = if case % 3 == 0 { rng.random_range(1..=k) } else { k };
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..used)).collect();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| if rng.random_bool(0.5) { t } else { rng.random_range(0..used) })
            .collect();
        let got = metrics(&confusion(&truth, &pred, k).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let want = brute_force(&truth, &pred, k);
        check(got.accuracy == want.accuracy, || format!("case {case}: accuracy"))?;
        check(got.precision == want.precision, || format!("case {case}: precision"))?;
        check(got.recall == want.recall, || format!("case {case}: recall"))?;
        check(got.f1 == want.f1, || format!("case {case}: f1"))?;
        check(
            [got.precision_macro, got.recall_macro, got.f1_macro] == want.macros,
            || format!("case {case}: macro means"),
        )?;
        check(
            [got.precision_weighted, got.recall_weighted, got.f1_weighted] == want.weighted,
            || format!("case {case}: weighted means"),
        )?;
        check((got.accuracy - got.recall_weighted).abs() <= 1e-12, || {
            format!("case {case}: accuracy {} != weighted recall {}", got.accuracy, got.recall_weighted)
        })?;
    }
    Ok("1000 random label sets match the brute-force counter".into())
}

// ---------------------------------------------------------------- 3

fn loss_analytics() -> Outcome {
    let mut perfect = vec![0.0; 9];
    perfect[4] = 1.0;
    let l0 = cross_entropy(&LossInputs::one_hot(perfect, 4));
    check(l0.abs() <= 1e-12, || format!("perfect prediction loss {l0}"))?;
    let lu = cross_entropy(&LossInputs::one_hot(vec![1.0 / 9.0; 9], 2));
    check((lu - 9f64.ln()).abs() <= 1e-6, || format!("uniform loss {lu}, want ln 9"))?;
    let mut half = vec![0.5 / 8.0; 9];
    half[0] = 0.5;
    let lh = cross_entropy(&LossInputs::one_hot(half, 0));
    check((lh + 0.5f64.ln()).abs() <= 1e-6, || format!("half loss {lh}, want -ln 0.5"))?;
    Ok(format!("{:.1e} / {lu:.6} / {lh:.6}", l0.abs()))
}

// ---------------------------------------------------------------- 4

fn descriptor_math() -> Outcome {
    let backbone = StubBackbone::new(Taxonomy::Object1000, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst = 0f64;
    for case in 0..500 {
        let real = rng.random_range(0..=10);
        let mut data = vec![0f32; 10 * 64 * 64 * 3];
        let tint: Vec<f32> = (0..3).map(|_| rng.random()).collect();
        for (i, v) in data.iter_mut().take(real * 64 * 64 * 3).enumerate() {
            *v = (tint[i % 3] + rng.random_range(-0.2f32..0.2)).clamp(0.0, 1.0);
        }
        let seq = FrameSequence::from_parts(format!("v{case}"), real, data).map_err(|e| e.to_string())?;
        let d = sum_descriptors(&seq, &backbone).map_err(|e| e.to_string())?;
        let total: f64 = d.data.iter().map(|&x| x as f64).sum();
        worst = worst.max((total - real as f64).abs());
        check((total - real as f64).abs() <= 1e-3, || format!("case {case}: sum {total} vs {real} real frames"))?;

        let mut noisy = seq.clone();
        for t in real..10 {
            noisy.frames.index_axis_mut(ndarray::Axis(0), t).mapv_inplace(|_| rng.random());
        }
        let d2 = sum_descriptors(&noisy, &backbone).map_err(|e| e.to_string())?;
        check(d2.data == d.data, || format!("case {case}: padding frames changed the descriptor"))?;
    }
    Ok(format!("500 sequences, max |sum - real_count| = {worst:.2e}"))
}

// ---------------------------------------------------------------- 5

const H: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + n.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn grads_of<M: Module<f64>>(m: &mut M) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    m.visit_params("", &mut |name, _, _, g| out.push((name.to_string(), g.to_vec())));
    out
}

fn nudge<M: Module<f64>>(m: &mut M, tensor: usize, elem: usize, delta: f64) {
    let mut i = 0;
    m.visit_params("", &mut |_, _, v, _| {
        if i == tensor {
            v[elem] += delta;
        }
        i += 1;
    });
}

/// Compares analytic parameter gradients with central differences of
/// `loss`. At most `per_tensor` coordinates are probed per tensor. Returns
/// the worst relative error.
fn check_params<M: Module<f64> + Clone>(
    model: &M,
    analytic: &[(String, Vec<f64>)],
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
    loss: &dyn Fn(&M) -> f64,
) -> Result<f64, String> {
    let mut probe = model.clone();
    let mut worst = 0f64;
    for (ti, (name, g)) in analytic.iter().enumerate() {
        let coords: Vec<usize> = if g.len() <= per_tensor {
            (0..g.len()).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..g.len())).collect()
        };
        let mut a = Vec::new();
        let mut n = Vec::new();
        for &c in &coords {
            nudge(&mut probe, ti, c, H);
            let up = loss(&probe);
            nudge(&mut probe, ti, c, -2.0 * H);
            let down = loss(&probe);
            nudge(&mut probe, ti, c, H);
            a.push(g[c]);
            n.push((up - down) / (2.0 * H));
        }
        let e = rel_error(&a, &n);
        worst = worst.max(e);
        check(e <= GRAD_TOL, || format!("{name}: relative error {e:.2e}"))?;
    }
    Ok(worst)
}

fn check_input<D: ndarray::Dimension>(
    x: &ndarray::Array<f64, D>,
    analytic: &ndarray::Array<f64, D>,
    loss: &dyn Fn(&ndarray::Array<f64, D>) -> f64,
) -> Result<f64, String> {
    let mut probe = x.clone();
    let mut n = Vec::new();
    for i in 0..x.len() {
        let slot = |p: &mut ndarray::Array<f64, D>| p.as_slice_mut().unwrap()[i];
        let orig = slot(&mut probe);
        probe.as_slice_mut().unwrap()[i] = orig + H;
        let up = loss(&probe);
        probe.as_slice_mut().unwrap()[i] = orig - H;
        let down = loss(&probe);
        probe.as_slice_mut().unwrap()[i] = orig;
        n.push((up - down) / (2.0 * H));
    }
    let a: Vec<f64> = analytic.iter().copied().collect();
    let e = rel_error(&a, &n);
    check(e <= GRAD_TOL, || format!("input gradient: relative error {e:.2e}"))?;
    Ok(e)
}

fn random_array<Sh: ndarray::ShapeBuilder>(rng: &mut ChaCha8Rng, shape: Sh, scale: f64) -> ndarray::Array<f64, Sh::Dim> {
    ndarray::Array::from_shape_simple_fn(shape, || rng.random_range(-scale..scale))
}

/// Zero biases put ReLU units exactly on their kink whenever the input
/// row is zero, where finite differences are meaningless. Checks run at a
/// generic point instead.
fn jitter_biases<M: Module<f64>>(m: &mut M, rng: &mut ChaCha8Rng) {
    m.visit_params("", &mut |name, _, v, _| {
        if name == "b" || name.ends_with(".b") {
            v.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
        }
    });
}

fn probe_loss(y: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (y * r).sum()
}

fn gradient_checks() -> Outcome {
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut bump = |k: &'static str, e: f64| {
        let w = worst.entry(k).or_insert(0.0);
        *w = w.max(e);
    };
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);

        // Head: MLP (two ReLU hidden layers) followed by softmax cross-entropy.
        let mut head = Mlp::<f64>::new(&mut rng, 8, &[6, 5], 9);
        jitter_biases(&mut head, &mut rng);
        let x = random_array(&mut rng, (4, 8), 1.0);
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..9)).collect();
        let (logits, caches) = head.forward(&x);
        let (_, _, d) = softmax_cross_entropy(&logits, &labels);
        head.zero_grad();
        let dx = head.backward(caches, d);
        let g = grads_of(&mut head);
        let ce = |m: &Mlp<f64>, x: &Array2<f64>| softmax_cross_entropy(&m.infer(x), &labels).0;
        bump("head", check_params(&head, &g, 64, &mut rng, &|m| ce(m, &x))?);
        bump("head", check_input(&x, &dx, &|xi| ce(&head, xi))?);

        // Dense blocks with both activations.
        for act in [Activation::Relu, Activation::Identity] {
            let mut dense = Dense::<f64>::new(&mut rng, 7, 5, act);
            jitter_biases(&mut dense, &mut rng);
            let x = random_array(&mut rng, (3, 7), 1.0);
            let r = random_array(&mut rng, (3, 5), 1.0);
            let (_, cache) = dense.forward(&x);
            dense.zero_grad();
            let dx = dense.backward(cache, r.clone());
            let g = grads_of(&mut dense);
            bump("dense", check_params(&dense, &g, 64, &mut rng, &|m| probe_loss(&m.infer(&x), &r))?);
            bump("dense", check_input(&x, &dx, &|xi| probe_loss(&dense.infer(xi), &r))?);
        }

        // LSTM: loss is a random projection of the last hidden state.
        let mut lstm = Lstm::<f64>::new(&mut rng, 3, 4);
        jitter_biases(&mut lstm, &mut rng);
        let xs: Array3<f64> = random_array(&mut rng, (2, 6, 3), 1.0);
        let r = random_array(&mut rng, (2, 4), 1.0);
        let (_, cache) = lstm.forward(&xs);
        lstm.zero_grad();
        let dxs = lstm.backward(cache, r.clone());
        let g = grads_of(&mut lstm);
        bump("lstm", check_params(&lstm, &g, 64, &mut rng, &|m| probe_loss(&m.infer(&xs), &r))?);
        bump("lstm", check_input(&xs, &dxs, &|xi| probe_loss(&lstm.infer(xi), &r))?);

        // ConvLSTM on a tiny clip; loss projects the pooled descriptor.
        let mut conv = ConvLstm::<f64>::new(&mut rng, 2, 3, (3, 3));
        jitter_biases(&mut conv, &mut rng);
        let clip: Array5<f64> = random_array(&mut rng, (2, 3, 4, 5, 2), 1.0);
        let r = random_array(&mut rng, (2, 3), 1.0);
        let (_, cache) = conv.forward(&clip);
        conv.zero_grad();
        let dclip = conv.backward(cache, r.clone());
        let g = grads_of(&mut conv);
        bump("convlstm", check_params(&conv, &g, 48, &mut rng, &|m| probe_loss(&m.infer(&clip), &r))?);
        bump("convlstm", check_input(&clip, &dclip, &|xi| probe_loss(&conv.infer(xi), &r))?);

        // Whole models, joint and late, on small encoders.
        for (mode, t, v) in [
            (FusionMode::Joint, TextKind::CountVect, VisualKind::ImgnFeat),
            (FusionMode::Late, TextKind::W2vPad, VisualKind::PlcFeat),
        ] {
            let mut cfg = FusionModelConfig::new(mode, Some(t), Some(v));
            cfg.encoder_units = 4;
            cfg.head_units = [6, 5];
            let mut model = build_model::<f64>(&cfg, seed).map_err(|e| e.to_string())?;
            jitter_biases(&mut model, &mut rng);
            let text_dim = if t == TextKind::CountVect { 1 } else { 100 };
            let inputs = Inputs::Pair {
                text: ModalityInput::Sequence(random_array(&mut rng, (3, 5, text_dim), 1.0)),
                visual: ModalityInput::Global(random_array(&mut rng, (3, v.shape()[0]), 0.5)),
            };
            let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..9)).collect();
            model.zero_grad();
            model.loss_and_grad(&inputs, &labels).map_err(|e| e.to_string())?;
            let g = grads_of(&mut model);
            let loss = |m: &scenefuse::fusion::FusionModel<f64>| {
                let mut scratch = m.clone();
                scratch.loss_and_grad(&inputs, &labels).unwrap().0
            };
            bump("model", check_params(&model, &g, 12, &mut rng, &loss)?);
        }
    }
    let detail: Vec<String> = worst.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect();
    Ok(format!("5 seeds, worst relative error: {}", detail.join(", ")))
}

// ---------------------------------------------------------------- 6-8

struct Corpus {
    _dir: tempfile::TempDir,
    root: PathBuf,
    manifest: PathBuf,
}

fn prepare_corpus() -> Result<Corpus, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().to_path_buf();
    let corpus = synth::generate(&root.join("corpus"), &SynthSpec::default()).map_err(|e| e.to_string())?;
    let manifest = corpus.manifest_path.clone();
    let cache = root.join("cache");
    let (m, c) = (manifest.to_str().unwrap(), cache.to_str().unwrap());
    let (code, out, err) = cli(&["ingest", m, "--cache", c, "--stub-clients"]);
    check(code == 0, || format!("ingest exited {code}: {err}"))?;
    check(out.contains("90 ingested"), || format!("ingest summary: {out}"))?;
    let (code, _, err) = cli(&[
        "featurize",
        m,
        "--cache",
        c,
        "--stub-clients",
        "--text",
        "count_vect,w2v_pad,w2v_sum,sent_bert",
        "--visual",
        "imgn_feat,plc_feat,frames",
    ]);
    check(code == 0, || format!("featurize exited {code}: {err}"))?;
    Ok(Corpus {
        _dir: dir,
        root,
        manifest,
    })
}

/// Nearest class mean (Euclidean) trained on the train split, scored on test.
fn nearest_centroid(corpus: &Corpus, kind: VisualKind) -> Result<f64, String> {
    let m = load_manifest(&corpus.manifest).map_err(|e| e.to_string())?;
    let store = FeatureStore::new(&corpus.root.join("cache"));
    let k = m.vocabulary.size();
    let feat = |id: &str| store.visual(id, kind).map(|f| f.data).map_err(|e| e.to_string());
    let dim = kind.shape().iter().product::<usize>();
    let mut sums = vec![vec![0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for e in m.split(Split::Train) {
        let c = m.label_index(e);
        for (s, v) in sums[c].iter_mut().zip(feat(&e.id)?) {
            *s += v as f64;
        }
        counts[c] += 1;
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= n.max(1) as f64);
    }
    let (mut hit, mut total) = (0, 0);
    for e in m.split(Split::Test) {
        let x = feat(&e.id)?;
        let dist = |c: &Vec<f64>| c.iter().zip(&x).map(|(a, &b)| (a - b as f64).powi(2)).sum::<f64>();
        let best = (0..k).min_by(|&a, &b| dist(&sums[a]).total_cmp(&dist(&sums[b]))).unwrap();
        hit += (best == m.label_index(e)) as usize;
        total += 1;
    }
    Ok(hit as f64 / total as f64)
}

fn write_experiment(corpus: &Corpus, name: &str, permutation: Option<u64>) -> Result<PathBuf, String> {
    let mut cfg = serde_json::json!({
        "name": name,
        "manifest": corpus.manifest,
        "cache_dir": corpus.root.join("cache"),
        "runs_dir": corpus.root.join("runs"),
        "model": {"fusion": "joint", "text_kind": "count_vect", "visual_kind": "imgn_feat"},
        "train": {"epochs": 20, "batch_size": 16, "learning_rate": 0.001, "patience": 10, "seed": 7},
        "folds": 3,
        "fold_seed": 0
    });
    if let Some(s) = permutation {
        cfg["label_permutation_seed"] = s.into();
    }
    let path = corpus.root.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).map_err(|e| e.to_string())?;
    Ok(path)
}

fn read_json(p: &Path) -> Result<Value, String> {
    let bytes = std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| e.to_string())
}

struct FoldNumbers {
    train: Vec<f64>,
    test: Vec<f64>,
}

fn train_run(corpus: &Corpus, name: &str, permutation: Option<u64>) -> Result<(PathBuf, FoldNumbers), String> {
    let cfg = write_experiment(corpus, name, permutation)?;
    let (code, _, err) = cli(&["train", cfg.to_str().unwrap()]);
    check(code == 0, || format!("train exited {code}: {err}"))?;
    let run = corpus.root.join("runs").join(name);
    let mut nums = FoldNumbers {
        train: vec![],
        test: vec![],
    };
    for f in 0..3 {
        let dir = run.join(format!("fold-{f}"));
        let s = read_json(&dir.join("train_summary.json"))?;
        let r = read_json(&dir.join("report.json"))?;
        nums.train.push(s["train_accuracy"].as_f64().ok_or("train_accuracy")?);
        nums.test.push(r["accuracy"].as_f64().ok_or("accuracy")?);
    }
    Ok((run, nums))
}

fn fmt_folds(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/")
}

fn end_to_end(corpus: &Corpus, prep: Duration) -> Result<(PathBuf, String), String> {
    let started = Instant::now();
    let nc = nearest_centroid(corpus, VisualKind::ImgnFeat)?;
    check(nc >= 0.9, || format!("nearest-centroid oracle only reaches {nc:.3}"))?;
    let (run, nums) = train_run(corpus, "joint-count-imgn", None)?;
    let elapsed = prep + started.elapsed();
    let detail = format!(
        "centroid oracle {nc:.2}; train {} test {} ({:.0} s)",
        fmt_folds(&nums.train),
        fmt_folds(&nums.test),
        elapsed.as_secs_f64()
    );
    for f in 0..3 {
        check(nums.train[f] >= 0.95, || format!("fold {f} train accuracy {:.3} < 0.95; {detail}", nums.train[f]))?;
        check(nums.test[f] >= 0.80, || format!("fold {f} test accuracy {:.3} < 0.80; {detail}", nums.test[f]))?;
    }
    check(elapsed < Duration::from_secs(15 * 60), || format!("took {elapsed:?}"))?;
    Ok((run, detail))
}

fn chance_control(corpus: &Corpus) -> Outcome {
    let (_, nums) = train_run(corpus, "permuted", Some(99))?;
    let detail = format!("test {}", fmt_folds(&nums.test));
    for (f, &a) in nums.test.iter().enumerate() {
        check((0.02..=0.30).contains(&a), || format!("fold {f} test accuracy {a:.3} outside [0.02, 0.30]; {detail}"))?;
    }
    Ok(detail)
}

/// Every printed number of a run: the aggregate table and each fold report.
fn printed(run: &Path) -> Result<Vec<String>, String> {
    let mut out = vec![std::fs::read_to_string(run.join("metrics.csv")).map_err(|e| e.to_string())?];
    for f in 0..3 {
        let dir = run.join(format!("fold-{f}"));
        for file in ["metrics.csv", "report.json", "predictions.json", "confusion.json", "history.json"] {
            out.push(std::fs::read_to_string(dir.join(file)).map_err(|e| format!("{file}: {e}"))?);
        }
    }
    Ok(out)
}

fn determinism(first_run: &Path) -> Outcome {
    let again = prepare_corpus()?;
    let (run, _) = train_run(&again, "joint-count-imgn", None)?;
    let (a, b) = (printed(first_run)?, printed(&run)?);
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        check(x == y, || format!("output {i} differs between identical runs"))?;
    }
    Ok(format!("{} report files identical", a.len()))
}

// ---------------------------------------------------------------- 9

/// Entry distribution per class of the InstaIndoor dataset (train, test).
const INSTAINDOOR: [(&str, u64, u64); 9] = [
    ("Cafe", 381, 129),
    ("Bar", 349, 98),
    ("Reading Room", 311, 95),
    ("Stadium", 412, 83),
    ("Arcade", 363, 82),
    ("Library", 337, 79),
    ("Closet", 258, 77),
    ("Beauty Salon", 219, 59),
    ("Aquarium", 400, 56),
];

fn manifest_fidelity() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/instaindoor.manifest");
    let (code, out, err) = cli(&["validate", path.to_str().unwrap()]);
    check(code == 0, || format!("validate exited {code}: {err}"))?;
    let rows: BTreeMap<String, Vec<String>> = out
        .lines()
        .filter(|l| l.contains('|'))
        .map(|l| {
            let cells: Vec<String> = l.split('|').map(|c| c.trim().to_string()).collect();
            (cells[0].clone(), cells[1..].to_vec())
        })
        .collect();
    let header = rows.get("Class").ok_or("no header row")?;
    let row = |name: &str| rows.get(name).ok_or(format!("no {name} row"));
    let (train, test, total) = (row("Train")?, row("Test")?, row("Total")?);
    for (name, tr, te) in INSTAINDOOR {
        let col = header.iter().position(|h| h == name).ok_or(format!("no column {name}"))?;
        let want = [tr.to_string(), te.to_string(), (tr + te).to_string()];
        let got = [train[col].clone(), test[col].clone(), total[col].clone()];
        check(got == want, || format!("{name}: got {got:?}, want {want:?}"))?;
    }
    let last = header.len() - 1;
    let sums = |i: usize| INSTAINDOOR.iter().map(|r| if i == 0 { r.1 } else { r.2 }).sum::<u64>();
    check(train[last] == sums(0).to_string() && test[last] == sums(1).to_string(), || "split totals".into())?;
    check(total[last] == "3788", || format!("total {}", total[last]))?;
    Ok(format!("3788 total, {}/{} split", train[last], test[last]))
}

// ---------------------------------------------------------------- driver

fn report(results: &mut Vec<bool>, n: usize, title: &str, started: Instant, outcome: Outcome) {
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS {n} {title} ({secs:.1} s): {detail}");
            results.push(true);
        }
        Err(why) => {
            println!("FAIL {n} {title} ({secs:.1} s): {why}");
            results.push(false);
        }
    }
}

fn main() {
    let mut results = Vec::new();

    let t = Instant::now();
    report(&mut results, 1, "fusion algebra", t, fusion_algebra());
    let t = Instant::now();
    report(&mut results, 2, "metrics oracle", t, metrics_oracle());
    let t = Instant::now();
    report(&mut results, 3, "loss analytics", t, loss_analytics());
    let t = Instant::now();
    report(&mut results, 4, "descriptor math", t, descriptor_math());
    let t = Instant::now();
    report(&mut results, 5, "gradient checks", t, gradient_checks());

    let t = Instant::now();
    match prepare_corpus() {
        Ok(corpus) => {
            let prep = t.elapsed();
            let t = Instant::now();
            match end_to_end(&corpus, prep) {
                Ok((run, detail)) => {
                    report(&mut results, 6, "end-to-end smoke", t, Ok(detail));
                    let t = Instant::now();
                    report(&mut results, 7, "chance control", t, chance_control(&corpus));
                    let t = Instant::now();
                    report(&mut results, 8, "determinism", t, determinism(&run));
                }
                Err(e) => {
                    report(&mut results, 6, "end-to-end smoke", t, Err(e));
                    let t = Instant::now();
                    report(&mut results, 7, "chance control", t, chance_control(&corpus));
                    let first = corpus.root.join("runs/joint-count-imgn");
                    let t = Instant::now();
                    let outcome = if first.join("metrics.csv").exists() {
                        determinism(&first)
                    } else {
                        Err("no first run to compare against".into())
                    };
                    report(&mut results, 8, "determinism", t, outcome);
                }
            }
        }
        Err(e) => {
            for (n, title) in [(6, "end-to-end smoke"), (7, "chance control"), (8, "determinism")] {
                report(&mut results, n, title, t, Err(format!("corpus preparation failed: {e}")));
            }
        }
    }

    let t = Instant::now();
    report(&mut results, 9, "manifest fidelity", t, manifest_fidelity());

    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
