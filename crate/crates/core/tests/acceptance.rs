//! Release acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sysloglm::attention::{attend, tiered_attention, AttentionKind};
use sysloglm::export::write_scores_csv;
use sysloglm::model::{
    forward_batch, tiered_forward, LanguageModel, ModelConfig, ModelKind, TierStream, UserContext,
};
use sysloglm::numerics::gradcheck::check_gradients;
use sysloglm::numerics::{Gradients, Graph, ParamStore, Tensor};
use sysloglm::pipeline::{
    auc_roc, center_user_scores, repeat_runs, DayCycleState, Experiment, ScoredEvent, TrainConfig,
};
use sysloglm::synthgen::{tokenized_corpus, GenConfig};
use sysloglm::tokenizer::{
    tokenize_char, tokenize_word, MachineFilter, RawEvent, TokenMode, TokenSequence, Vocabulary,
};

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn run_criterion(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match &result {
        Ok(detail) => println!("PASS  {name} ({secs:.1}s): {detail}"),
        Err(detail) => println!("FAIL  {name} ({secs:.1}s): {detail}"),
    }
    result.is_ok()
}

fn toy(kind: ModelKind, attention: AttentionKind) -> ModelConfig {
    ModelConfig {
        kind,
        attention,
        vocab_size: 12,
        embedding_dim: 6,
        hidden_dim: 8,
        attention_dim: 4,
        upper_hidden_dim: 8,
        max_positions: 11,
    }
}

fn line(user: &str, interior: &[usize], line_id: u64) -> TokenSequence {
    let mut ids = vec![1];
    ids.extend_from_slice(interior);
    ids.push(2);
    TokenSequence {
        ids,
        user: user.into(),
        day: 1,
        red: false,
        line_id,
    }
}

fn random_lines(
    rng: &mut ChaCha8Rng,
    n: usize,
    vocab: usize,
    max_len: usize,
) -> Vec<TokenSequence> {
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..=max_len);
            let interior: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
            line(&format!("U{}@D", rng.gen_range(0..3)), &interior, i as u64)
        })
        .collect()
}

fn as_refs(seqs: &[TokenSequence]) -> Vec<&TokenSequence> {
    seqs.iter().collect()
}

// ---------------------------------------------------------------- gradients

fn batch_loss(
    model: &LanguageModel,
    store: &ParamStore,
    seqs: &[&TokenSequence],
) -> sysloglm::Result<(f64, Gradients)> {
    let mut g = Graph::new(store);
    let out = forward_batch(&mut g, model, seqs, None)?;
    let total = out.total_nll(&mut g)?;
    Ok((g.value(total).data()[0], g.backward(total)?))
}

fn window_loss(
    model: &LanguageModel,
    store: &ParamStore,
    streams: &[TierStream],
) -> sysloglm::Result<(f64, Gradients)> {
    let mut g = Graph::new(store);
    let fwd = tiered_forward(&mut g, model, streams)?;
    let (total, _) = fwd.total_nll(&mut g)?;
    Ok((g.value(total).data()[0], g.backward(total)?))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let configs = [
        (ModelKind::Em, AttentionKind::None),
        (ModelKind::Bem, AttentionKind::None),
        (ModelKind::Em, AttentionKind::Fixed),
        (ModelKind::Em, AttentionKind::Syntax),
        (ModelKind::Em, AttentionKind::Semantic1),
        (ModelKind::Em, AttentionKind::Semantic2),
        (ModelKind::TEm, AttentionKind::None),
        (ModelKind::TaEm, AttentionKind::None),
        (ModelKind::TaBem, AttentionKind::None),
    ];
    // T = 6 tokens per line: SOS, four interior tokens, EOS
    let a = [
        line("U1@D", &[3, 4, 5, 6], 0),
        line("U1@D", &[7, 8, 9, 0], 1),
    ];
    let b = [
        line("U2@D", &[10, 11, 3, 5], 2),
        line("U2@D", &[4, 4, 8, 11], 3),
    ];
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (kind, att) in configs {
        let model = LanguageModel::new(toy(kind, att), 21).map_err(|e| e.to_string())?;
        let report = if kind.is_tiered() {
            let dim = model.config.upper_hidden_dim;
            let mut ctx = UserContext::new("U2@D", dim);
            ctx.h
                .data_mut()
                .iter_mut()
                .enumerate()
                .for_each(|(i, v)| *v = 0.1 * i as f64 - 0.3);
            let streams = [
                TierStream {
                    context: UserContext::new("U1@D", dim),
                    lines: as_refs(&a),
                },
                TierStream {
                    context: ctx,
                    lines: as_refs(&b),
                },
            ];
            let (_, grads) =
                window_loss(&model, &model.params, &streams).map_err(|e| e.to_string())?;
            check_gradients(&model.params, &grads, 1e-3, |s| {
                Ok(window_loss(&model, s, &streams)?.0)
            })
        } else {
            let seqs: Vec<&TokenSequence> = a.iter().chain(&b).collect();
            let (_, grads) = batch_loss(&model, &model.params, &seqs).map_err(|e| e.to_string())?;
            check_gradients(&model.params, &grads, 1e-3, |s| {
                Ok(batch_loss(&model, s, &seqs)?.0)
            })
        }
        .map_err(|e| e.to_string())?;
        ensure!(
            report.max_rel_err < 1e-4,
            "{}+{}: relative error {:.3e} at {}[{}]",
            kind.as_str(),
            att.as_str(),
            report.max_rel_err,
            report.worst_param,
            report.worst_index
        );
        worst = worst.max(report.max_rel_err);
        checked += report.checked;
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "suite took {elapsed:?}");
    Ok(format!(
        "9 configurations, {checked} scalars, worst relative error {worst:.2e}, {elapsed:.1?}"
    ))
}

// ---------------------------------------------------------------- attention

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::matrix(
        r,
        c,
        (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn check_simplex(w: &[f64], len: usize) -> Outcome {
    ensure!(
        w.len() == len,
        "weights of length {} where {len} expected",
        w.len()
    );
    ensure!(w.iter().all(|&x| x >= 0.0), "negative weight in {w:?}");
    let s: f64 = w.iter().sum();
    ensure!((s - 1.0).abs() <= 1e-9, "weights sum to {s}");
    Ok(String::new())
}

fn attention_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..10_000 {
        let rows = rng.gen_range(1..=12);
        let dv = rng.gen_range(1..=6);
        let da = rng.gen_range(1..=5);
        let scale = [0.1, 1.0, 10.0][case % 3];
        let values = random_matrix(&mut rng, rows, dv, scale);
        let w_key = random_matrix(&mut rng, dv, da, 1.0);
        let query = random_matrix(&mut rng, 1, da, scale);
        let (a, d) = attend(&values, &query, &w_key).map_err(|e| e.to_string())?;
        check_simplex(d.data(), rows).map_err(|e| format!("case {case}: {e}"))?;
        for c in 0..dv {
            let col: Vec<f64> = (0..rows).map(|r| values.get(r, c)).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let x = a.data()[c];
            let tol = 1e-12 * hi.abs().max(lo.abs()).max(1.0);
            ensure!(
                x >= lo - tol && x <= hi + tol,
                "case {case}: a[{c}] = {x} outside [{lo}, {hi}]"
            );
        }
    }
    // traces captured from real forward passes
    let mut traces = 0;
    for (kind, att) in [
        (ModelKind::Em, AttentionKind::Fixed),
        (ModelKind::Em, AttentionKind::Syntax),
        (ModelKind::Em, AttentionKind::Semantic1),
        (ModelKind::Em, AttentionKind::Semantic2),
        (ModelKind::TaEm, AttentionKind::None),
        (ModelKind::TaBem, AttentionKind::None),
    ] {
        let model = LanguageModel::new(toy(kind, att), 5).map_err(|e| e.to_string())?;
        let seqs = random_lines(&mut rng, 60, 12, 10);
        let outs = if kind.is_tiered() {
            let mut ctx = sysloglm::model::ContextTable::new(model.config.upper_hidden_dim);
            model.score_tiered(&mut ctx, &as_refs(&seqs), 8, true)
        } else {
            model.score_batch(&as_refs(&seqs), true)
        }
        .map_err(|e| e.to_string())?;
        for (seq, out) in seqs.iter().zip(&outs) {
            let trace = out.trace.as_ref().ok_or("missing trace")?;
            trace.validate().map_err(|e| e.to_string())?;
            if kind.is_tiered() {
                ensure!(
                    trace.steps.len() == 1,
                    "tiered trace with {} steps",
                    trace.steps.len()
                );
                check_simplex(&trace.steps[0].weights, seq.ids.len())?;
            } else {
                ensure!(
                    trace.steps.len() == seq.ids.len() - 2,
                    "trace of {} steps",
                    trace.steps.len()
                );
                for step in &trace.steps {
                    check_simplex(&step.weights, step.position - 1)?;
                }
            }
            traces += 1;
        }
    }
    Ok(format!("10000 random cases and {traces} captured traces"))
}

// --------------------------------------------------------------- reductions

fn bits(outs: &[sysloglm::model::LineOutput]) -> Vec<u64> {
    outs.iter()
        .flat_map(|o| o.token_nll.iter().map(|v| v.to_bits()))
        .collect()
}

/// Copies every parameter of `dst` from the same-named one in `src`,
/// keeping the leading entries when `src` is larger.
fn copy_shared(dst: &mut LanguageModel, src: &LanguageModel) {
    let ids: Vec<_> = dst.params.ids().collect();
    for id in ids {
        let name = dst.params.name(id).to_string();
        let from = src
            .params
            .get(
                src.params
                    .find(&name)
                    .unwrap_or_else(|| panic!("no {name}")),
            )
            .data();
        let to = dst.params.get_mut(id).data_mut();
        let n = to.len();
        to.copy_from_slice(&from[..n]);
    }
}

fn reduction_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let seqs = random_lines(&mut rng, 40, 12, 10);
    let refs = as_refs(&seqs);

    let mut bem = LanguageModel::new(toy(ModelKind::Bem, AttentionKind::None), 4).unwrap();
    let wb = bem.layout.out_wb.ok_or("bem without W^b")?;
    bem.params.get_mut(wb).data_mut().fill(0.0);
    let mut em = LanguageModel::new(toy(ModelKind::Em, AttentionKind::None), 99).unwrap();
    copy_shared(&mut em, &bem);
    let em_bits = bits(&em.score_batch(&refs, false).unwrap());
    ensure!(
        bits(&bem.score_batch(&refs, false).unwrap()) == em_bits,
        "BEM with zero W^b differs from EM"
    );

    let mut att = LanguageModel::new(toy(ModelKind::Em, AttentionKind::Semantic1), 4).unwrap();
    copy_shared(&mut em, &att);
    let h = em.config.hidden_dim;
    let v = em.config.vocab_size;
    att.params.get_mut(att.layout.out_w).data_mut()[h * v..].fill(0.0);
    ensure!(
        bits(&att.score_batch(&refs, false).unwrap())
            == bits(&em.score_batch(&refs, false).unwrap()),
        "attention EM with zeroed attention columns differs from EM"
    );

    let mut fixed = LanguageModel::new(toy(ModelKind::Em, AttentionKind::Fixed), 4).unwrap();
    let params = fixed.layout.attention.clone().ok_or("no attention head")?;
    let q = match params.query {
        sysloglm::attention::QueryParams::Fixed(q) => q,
        _ => return Err("fixed head without a fixed query".into()),
    };
    fixed.params.get_mut(q).data_mut().fill(0.0);
    for out in fixed.score_batch(&refs, true).unwrap() {
        for step in out.trace.unwrap().steps {
            let n = step.weights.len() as f64;
            ensure!(
                step.weights.iter().all(|&w| w == 1.0 / n),
                "q = 0 gave {:?}",
                step.weights
            );
        }
    }
    for rows in 1..=9 {
        let values = random_matrix(&mut rng, rows, 5, 2.0);
        let (_, d) = attend(
            &values,
            &Tensor::zeros(&[1, 3]),
            &random_matrix(&mut rng, 5, 3, 1.0),
        )
        .unwrap();
        ensure!(
            d.data().iter().all(|&w| w == 1.0 / rows as f64),
            "q = 0 with {rows} rows gave {:?}",
            d.data()
        );
    }

    for _ in 0..100 {
        let h1 = random_matrix(&mut rng, 1, 6, 3.0);
        let (a, d) = tiered_attention(
            &h1,
            &h1,
            &random_matrix(&mut rng, 6, 4, 1.0),
            &random_matrix(&mut rng, 6, 4, 1.0),
        )
        .unwrap();
        ensure!(d.data() == [1.0], "T = 1 weights {:?}", d.data());
        ensure!(
            a.data() == h1.data(),
            "T = 1 tiered attention returned {:?}",
            a.data()
        );
    }
    Ok("BEM(W^b = 0) = EM, zero query uniform, T = 1 returns h(1), zeroed attention columns = EM; all bit-exact".into())
}

// --------------------------------------------------------------------- AUC

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &p) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &n) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            num += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    num / pairs
}

fn random_labelled(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.gen_range(2..=1000);
    let levels = [3, 20, 1000][rng.gen_range(0..3)];
    let red_rate = rng.gen_range(0.01..0.5);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(red_rate)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = labels
        .iter()
        .map(|&red| {
            (rng.gen_range(0..levels) as f64 + if red { levels as f64 * 0.2 } else { 0.0 }) / 7.0
        })
        .collect();
    (scores, labels)
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut with_ties = 0;
    for set in 0..100 {
        let (scores, labels) = random_labelled(&mut rng);
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() < scores.len() {
            with_ties += 1;
        }
        let fast = auc_roc(&scores, &labels).map_err(|e| e.to_string())?;
        let slow = pairwise_auc(&scores, &labels);
        let err = (fast.auc - slow).abs();
        ensure!(
            err <= 1e-12,
            "set {set}: fast {} vs pairwise {slow}",
            fast.auc
        );
        ensure!(
            (fast.trapezoid_area() - slow).abs() <= 1e-9,
            "set {set}: ROC area disagrees"
        );
        worst = worst.max(err);
    }
    ensure!(with_ties > 50, "only {with_ties} sets had ties");
    Ok(format!(
        "100 sets ({with_ties} with ties), worst difference {worst:.1e}"
    ))
}

fn centering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..50 {
        let n = rng.gen_range(20..500);
        let mut events: Vec<ScoredEvent> = (0..n)
            .map(|i| {
                let raw = rng.gen_range(0.0..60.0);
                ScoredEvent {
                    line_id: i as u64,
                    user: format!("U{}@D", rng.gen_range(0..8)),
                    day: rng.gen_range(1..4),
                    raw,
                    centered: raw,
                    red: rng.gen_bool(0.1) || i == 0,
                }
            })
            .collect();
        events[1].red = false;
        center_user_scores(&mut events);
        let mut groups: std::collections::HashMap<(String, u32), (f64, usize)> = Default::default();
        for e in &events {
            let g = groups.entry((e.user.clone(), e.day)).or_default();
            g.0 += e.centered;
            g.1 += 1;
        }
        for ((u, d), (sum, count)) in &groups {
            ensure!(
                sum.abs() <= 1e-9 * *count as f64,
                "trial {trial}: ({u}, {d}) sums to {sum}"
            );
        }
        let scores: Vec<f64> = events.iter().map(|e| e.centered).collect();
        let labels: Vec<bool> = events.iter().map(|e| e.red).collect();
        let base = auc_roc(&scores, &labels).unwrap().auc;
        let exp: Vec<f64> = scores.iter().map(|s| (s / 10.0).exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| 2.5 * s - 7.0).collect();
        for (name, t) in [("exp", exp), ("affine", affine)] {
            let auc = auc_roc(&t, &labels).unwrap().auc;
            ensure!(
                (auc - base).abs() <= 1e-12,
                "trial {trial}: {name} changed AUC {base} -> {auc}"
            );
        }
    }
    Ok("50 trials: group sums within 1e-9 N_u, AUC unchanged by exp and affine maps".into())
}

// ------------------------------------------------------------------ online

fn small_corpus() -> (Vocabulary, Vec<(u32, Vec<TokenSequence>)>) {
    let cfg = GenConfig {
        n_users: 10,
        n_pcs: 60,
        n_days: 4,
        lines_per_day: 300,
        red_count_per_day: 5,
        seed: 12,
        ..GenConfig::default()
    };
    tokenized_corpus(&cfg, TokenMode::Word, 10).unwrap()
}

fn small_model(kind: ModelKind, attention: AttentionKind, vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        embedding_dim: 12,
        hidden_dim: 12,
        attention_dim: 6,
        ..toy(kind, attention)
    }
}

fn online_protocol() -> Outcome {
    let (vocab, days) = small_corpus();
    let train = TrainConfig {
        batch_size: 32,
        ..TrainConfig::default()
    };
    for kind in [ModelKind::Em, ModelKind::TEm] {
        let att = if kind == ModelKind::Em {
            AttentionKind::Semantic1
        } else {
            AttentionKind::None
        };
        let fresh = || {
            let model = LanguageModel::new(small_model(kind, att, vocab.len()), 8).unwrap();
            DayCycleState::new(model, train.clone(), TokenMode::Word, 8).unwrap()
        };
        let mut short = fresh();
        let mut long = fresh();
        let mut short_scores = Vec::new();
        for (d, lines) in &days[..3] {
            short_scores.push(short.run_day_cycle(*d, lines.clone(), false).unwrap());
        }
        for (i, (d, lines)) in days.iter().enumerate() {
            let frozen = long.eval.params.content_hash();
            let preview = long.score_frozen(lines, false).unwrap();
            let r = long.run_day_cycle(*d, lines.clone(), false).unwrap();
            ensure!(
                r.eval_hash == frozen,
                "{}: day {d} not scored with the frozen copy",
                kind.as_str()
            );
            if i > 0 {
                let raw: Vec<u64> = r.scores.iter().map(|s| s.raw.to_bits()).collect();
                let want: Vec<u64> = preview.iter().map(|o| o.loss.to_bits()).collect();
                ensure!(
                    raw == want,
                    "{}: day {d} scores changed by training",
                    kind.as_str()
                );
            }
            if i < 3 {
                ensure!(
                    r.scores == short_scores[i].scores,
                    "{}: day {d} depends on later days",
                    kind.as_str()
                );
                ensure!(
                    r.eval_hash == short_scores[i].eval_hash,
                    "{}: hash mismatch on day {d}",
                    kind.as_str()
                );
            }
        }
        let peak = days.iter().map(|(_, l)| l.len()).max().unwrap();
        ensure!(
            long.peak_retained() == peak,
            "peak retention {} for days of {peak}",
            long.peak_retained()
        );
        ensure!(long.retained() == 0, "lines retained after the last day");
        if kind == ModelKind::Em {
            let day = &days[3].1;
            let forward = long.score_frozen(day, false).unwrap();
            let mut order: Vec<usize> = (0..day.len()).collect();
            order.reverse();
            order.swap(0, day.len() / 2);
            let shuffled: Vec<TokenSequence> = order.iter().map(|&i| day[i].clone()).collect();
            let other = long.score_frozen(&shuffled, false).unwrap();
            for (k, &i) in order.iter().enumerate() {
                ensure!(
                    other[k].loss.to_bits() == forward[i].loss.to_bits(),
                    "order changed line {i}"
                );
            }
        }
    }
    Ok("frozen-copy hashes match, later training never changes earlier scores, order invariant, one day retained".into())
}

// ------------------------------------------------------------- end to end

fn e2e_experiment(attention: AttentionKind, vocab: usize) -> Experiment {
    Experiment {
        model: ModelConfig {
            kind: ModelKind::Em,
            attention,
            vocab_size: vocab,
            embedding_dim: 128,
            hidden_dim: 128,
            attention_dim: 128,
            upper_hidden_dim: 128,
            max_positions: 11,
        },
        train: TrainConfig::default(),
        mode: TokenMode::Word,
    }
}

struct EndToEnd {
    vocab: Vocabulary,
    days: Vec<(u32, Vec<TokenSequence>)>,
    semantic_auc: Option<f64>,
}

fn end_to_end(ctx: &mut EndToEnd) -> Outcome {
    let cfg = GenConfig::default();
    ensure!(
        (
            cfg.n_users,
            cfg.n_pcs,
            cfg.lines_per_day,
            cfg.n_days,
            cfg.red_count_per_day
        ) == (50, 200, 5000, 2, 25),
        "generator defaults drifted"
    );
    let exp = e2e_experiment(AttentionKind::Semantic1, ctx.vocab.len());
    let start = Instant::now();
    let with = exp.run(1, &ctx.days).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ctx.semantic_auc = Some(with.roc.auc);
    let without = e2e_experiment(AttentionKind::None, ctx.vocab.len())
        .run(1, &ctx.days)
        .map_err(|e| e.to_string())?;
    let red = with.scores.iter().filter(|s| s.red).count();
    ensure!(
        with.scores.len() == 5000 && red == 25,
        "{} scores with {red} red",
        with.scores.len()
    );
    ensure!(
        with.roc.auc >= 0.90,
        "semantic1 AUC {:.4} below 0.90",
        with.roc.auc
    );
    ensure!(
        (without.roc.auc - with.roc.auc).abs() <= 0.05,
        "no-attention AUC {:.4} vs semantic1 {:.4}",
        without.roc.auc,
        with.roc.auc
    );
    ensure!(
        took <= Duration::from_secs(600),
        "semantic1 run took {took:?}"
    );
    Ok(format!(
        "semantic1 AUC {:.4} in {:.1?}, no attention AUC {:.4}, vocabulary {}",
        with.roc.auc,
        took,
        without.roc.auc,
        ctx.vocab.len()
    ))
}

fn seed_variance(ctx: &EndToEnd) -> Outcome {
    let exp = e2e_experiment(AttentionKind::Semantic1, ctx.vocab.len());
    let summary = repeat_runs(&[1, 2, 3, 4, 5], |seed| match (seed, ctx.semantic_auc) {
        (1, Some(auc)) => Ok(auc),
        _ => Ok(exp.run(seed, &ctx.days)?.roc.auc),
    })
    .map_err(|e| e.to_string())?;
    println!(
        "      {:<24} {:>6} {:>6} {:>6} {:>6}",
        "", "Mean", "Max", "Min", "Std. Dev."
    );
    println!("      {}", summary.table_row("EM semantic1 (5 seeds)"));
    ensure!(summary.std <= 0.05, "std {:.4} across seeds", summary.std);
    Ok(format!("AUCs {:?}, std {:.4}", summary.values, summary.std))
}

// --------------------------------------------------------------- tokenizer

fn event(fields: [&str; 8]) -> RawEvent {
    RawEvent::new(0, fields.iter().map(|s| s.to_string()).collect()).unwrap()
}

fn tokenizer_conformance() -> Outcome {
    let base = [
        "U1@DOM1", "U1@DOM1", "C1", "C2", "Kerberos", "Network", "LogOn", "Success",
    ];
    let mut events = Vec::new();
    let mut push = |n: usize, slot: usize, value: &str| {
        for _ in 0..n {
            let mut f = base;
            f[slot] = value;
            events.push(event(f));
        }
    };
    push(39, 2, "C39");
    push(40, 2, "C40");
    push(25, 2, "C25");
    push(25, 3, "C25");
    push(40, 0, "U7@DOM1");
    let vocab = Vocabulary::build(&events, 40).map_err(|e| e.to_string())?;
    ensure!(vocab.id("C39").is_none(), "39 occurrences admitted");
    ensure!(vocab.id("C40").is_some(), "40 occurrences rejected");
    ensure!(vocab.id("C25").is_none(), "25 + 25 across fields admitted");
    ensure!(vocab.id("U7").is_some(), "user names are not split on @");
    ensure!(
        Vocabulary::build(std::iter::empty(), 40).is_err(),
        "empty stream accepted"
    );

    let line = RawEvent::parse_lanl(
        "5,U12@DOM1,U13@DOM1,C1,C2,Kerberos,Network,LogOn,Success",
        0,
    )
    .map_err(|e| e.to_string())?;
    let w = tokenize_word(&line, &vocab, 0).map_err(|e| e.to_string())?;
    ensure!(w.ids.len() == 12, "word line of {} tokens", w.ids.len());
    let unseen = tokenize_word(
        &event([
            "U1@DOM1", "U1@DOM1", "C9999", "C2", "Kerberos", "Network", "LogOn", "Success",
        ]),
        &vocab,
        1,
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        Some(unseen.ids[5]) == vocab.oov_id(),
        "unseen PC not mapped to OOV"
    );

    let chars = Vocabulary::chars();
    ensure!(
        chars.len() == 97 && chars.oov_id().is_none(),
        "char vocabulary of {}",
        chars.len()
    );
    ensure!(
        chars.id(",").is_some(),
        "comma missing from the char vocabulary"
    );
    let ab = tokenize_char(&event(["A", "B", "C", "D", "E", "F", "G", "H"]), &chars, 0)
        .map_err(|e| e.to_string())?;
    ensure!(
        ab.ids.len() == 15 + 2,
        "char line of {} tokens",
        ab.ids.len()
    );
    let tab = event(["U1@D\tX", "U1@D", "C1", "C2", "K", "N", "L", "S"]);
    ensure!(
        tokenize_char(&tab, &chars, 0).is_err(),
        "tab accepted in char mode"
    );

    let filter = MachineFilter::Default;
    let machine = event(["C625$@DOM1", "U1@DOM1", "C1", "C2", "K", "N", "L", "S"]);
    let digits = event(["C17@DOM1", "U1@DOM1", "C1", "C2", "K", "N", "L", "S"]);
    let user = event(["U12@DOM1", "U1@DOM1", "C1", "C2", "K", "N", "L", "S"]);
    ensure!(
        !filter.keep(&machine) && !filter.keep(&digits),
        "machine account kept"
    );
    ensure!(filter.keep(&user), "user account dropped");
    ensure!(
        MachineFilter::Nothing.keep(&machine),
        "match-nothing filter dropped a line"
    );
    Ok("threshold 39/40/25+25, OOV, 97-token char vocabulary, machine filter".into())
}

// ------------------------------------------------------------- determinism

fn determinism() -> Outcome {
    let (vocab, days) = small_corpus();
    let exp = Experiment {
        model: small_model(ModelKind::Em, AttentionKind::Semantic1, vocab.len()),
        train: TrainConfig {
            batch_size: 32,
            ..TrainConfig::default()
        },
        mode: TokenMode::Word,
    };
    let file = || {
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &exp.run(6, &days).unwrap().scores).unwrap();
        buf
    };
    let (a, b) = (file(), file());
    ensure!(a == b, "score files differ");
    let tiered = Experiment {
        model: small_model(ModelKind::TaBem, AttentionKind::None, vocab.len()),
        ..exp.clone()
    };
    let scores = |e: &Experiment| {
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &e.run(6, &days).unwrap().scores).unwrap();
        buf
    };
    ensure!(
        scores(&tiered) == scores(&tiered),
        "tiered score files differ"
    );
    Ok(format!(
        "{} identical bytes per EM run, tiered runs identical",
        a.len()
    ))
}

#[test]
fn acceptance() {
    let mut results = vec![
        run_criterion("gradient suite", gradient_suite),
        run_criterion("attention invariants", attention_invariants),
        run_criterion("reduction identities", reduction_identities),
        run_criterion("AUC oracle", auc_oracle),
        run_criterion("centering", centering),
        run_criterion("online protocol", online_protocol),
    ];
    let (vocab, days) = tokenized_corpus(&GenConfig::default(), TokenMode::Word, 40).unwrap();
    let mut ctx = EndToEnd {
        vocab,
        days,
        semantic_auc: None,
    };
    results.push(run_criterion("end-to-end detection", || {
        end_to_end(&mut ctx)
    }));
    results.push(run_criterion("seed variance", || seed_variance(&ctx)));
    results.push(run_criterion(
        "tokenizer conformance",
        tokenizer_conformance,
    ));
    results.push(run_criterion("determinism", determinism));
    let failed = results.iter().filter(|ok| !**ok).count();
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
