//! One line per acceptance criterion; exits nonzero when any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use conystrom_core::continual::{
    CoNyContState, CoNyFixedState, CoReState, CoSiState, ContinualAttention, ContinualConfig, Mode, StepOutput,
    TokenTriple,
};
use conystrom_core::cost::{Memory, Variant, VariantCost};
use conystrom_core::landmarks::{kmeans_landmarks, LandmarkPair};
use conystrom_core::tensor::{pinv_iterative, pinv_residual};
use conystrom_core::{sda_exact, sda_nystrom, AttentionInput, Matrix};

type Outcome = Result<String, String>;

const NS: [usize; 3] = [8, 16, 120];
const DS: [usize; 3] = [2, 8, 64];
const MS: [usize; 3] = [2, 4, 8];
const TOL: f64 = 1e-9;
const SINGLE_TOL: f64 = 1e-12;
/// Shared by the continual states and their batch oracles in criteria 2 and 3.
const GRID_PINV_ITERS: usize = 16;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cfg() -> ContinualConfig {
    ContinualConfig {
        pinv_iters: GRID_PINV_ITERS,
        ..ContinualConfig::default()
    }
}

fn retro(out: StepOutput) -> Matrix {
    match out {
        StepOutput::Retroactive(m) => m,
        StepOutput::Single(_) => unreachable!(),
    }
}

/// Largest single-vs-last-row gap seen in criteria 1 to 3.
#[derive(Default)]
struct SingleGap {
    worst: f64,
    checks: usize,
}

impl SingleGap {
    fn record(&mut self, single: &[f64], last_row: &[f64]) {
        self.worst = self.worst.max(max_abs_diff(single, last_row));
        self.checks += 1;
    }
}

fn seed_of(n: usize, d: usize, m: usize) -> u64 {
    (n * 10_000 + d * 100 + m) as u64
}

fn next_token(r: &mut rand::rngs::StdRng, d: usize) -> AttentionInput {
    uniform_input(r, 1, d, 1.0)
}

fn criterion_1(gap: &mut SingleGap) -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for n in NS {
        for d in DS {
            let mut r = rng(seed_of(n, d, 0));
            let x = uniform_input(&mut r, n, d, 1.0);
            let mut core = CoReState::init(&x, ContinualConfig::default()).map_err(|e| e.to_string())?;
            let mut si = CoSiState::init(&x).map_err(|e| e.to_string())?;
            let mut win = SlidingWindow::new(x);
            for step in 0..3 * n {
                let t = next_token(&mut r, d);
                let tok = TokenTriple::from_block(&t, 0);
                let got = core.step_retroactive(tok).map_err(|e| e.to_string())?;
                win.push(t.q.row(0), t.k.row(0), t.v.row(0));
                let want = sda_exact(&win.x).map_err(|e| e.to_string())?;
                let err = rel_err(&got, &want);
                worst = worst.max(err);
                check(err <= TOL, || format!("n={n} d={d} step={step}: rel err {err:e}"))?;
                gap.record(core.output(Mode::Single).unwrap().last_row(), got.row(n - 1));
                gap.record(&si.step_single(tok).map_err(|e| e.to_string())?, got.row(n - 1));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("max rel err {worst:.2e} over 9 configs, {secs:.2} s"))
}

fn criterion_2(gap: &mut SingleGap) -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut configs = 0;
    for n in NS {
        for d in DS {
            for m in MS.into_iter().filter(|&m| m <= n) {
                configs += 1;
                let mut r = rng(seed_of(n, d, m));
                let x = uniform_input(&mut r, n, d, 1.0);
                let mut s = CoNyContState::init(&x, m, cfg()).map_err(|e| format!("n={n} d={d} m={m}: {e}"))?;
                let mut win = SlidingWindow::new(x);
                let mut updates = 0;
                for step in 0..3 * n {
                    let t = next_token(&mut r, d);
                    let info = s
                        .advance(TokenTriple::from_block(&t, 0))
                        .map_err(|e| format!("n={n} d={d} m={m} step={step}: {e}"))?;
                    updates += usize::from(info.landmark_updated);
                    win.push(t.q.row(0), t.k.row(0), t.v.row(0));
                    let l = s.landmarks();
                    let want = sda_nystrom(&win.x, &l.q, &l.k, GRID_PINV_ITERS).map_err(|e| e.to_string())?;
                    let got = retro(s.output(Mode::Retroactive).map_err(|e| e.to_string())?);
                    let single = s.output(Mode::Single).map_err(|e| e.to_string())?;
                    let err = rel_err(&got, &want);
                    let err_single = rel_err(
                        &single.clone().into_matrix(),
                        &want.slice_rows(n - 1, n),
                    );
                    worst = worst.max(err).max(err_single);
                    check(err <= TOL && err_single <= TOL, || {
                        format!("n={n} d={d} m={m} step={step}: rel err {err:e} / single {err_single:e}")
                    })?;
                    gap.record(single.last_row(), got.row(n - 1));
                }
                check(updates >= 2, || format!("n={n} d={d} m={m}: only {updates} landmark updates"))?;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 120.0, || format!("took {secs:.1} s"))?;
    Ok(format!("max rel err {worst:.2e} over {configs} configs, {secs:.2} s"))
}

/// k-means landmarks fitted on a separate seeded token set of the stream's distribution.
fn kmeans_pair(d: usize, m: usize, seed: u64) -> Result<LandmarkPair, String> {
    let mut r = rng(seed ^ 0x5eed);
    let train = uniform_input(&mut r, 256.max(8 * m), d, 1.0);
    let q = kmeans_landmarks(&train.q, m, seed, 100).map_err(|e| e.to_string())?;
    let k = kmeans_landmarks(&train.k, m, seed + 1, 100).map_err(|e| e.to_string())?;
    LandmarkPair::new(q, k).map_err(|e| e.to_string())
}

fn criterion_3(gap: &mut SingleGap) -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut configs = 0;
    for n in NS {
        for d in DS {
            for m in MS.into_iter().filter(|&m| m <= n) {
                configs += 1;
                let lm = kmeans_pair(d, m, seed_of(n, d, m))?;
                let mut r = rng(seed_of(n, d, m) + 1);
                let x = uniform_input(&mut r, n, d, 1.0);
                let mut s = CoNyFixedState::init(&x, lm.clone(), cfg())
                    .map_err(|e| format!("n={n} d={d} m={m}: {e}"))?;
                let mut win = SlidingWindow::new(x);
                for step in 0..3 * n {
                    let t = next_token(&mut r, d);
                    s.advance(TokenTriple::from_block(&t, 0)).map_err(|e| e.to_string())?;
                    win.push(t.q.row(0), t.k.row(0), t.v.row(0));
                    let want = sda_nystrom(&win.x, &lm.q, &lm.k, GRID_PINV_ITERS).map_err(|e| e.to_string())?;
                    let got = retro(s.output(Mode::Retroactive).map_err(|e| e.to_string())?);
                    let single = s.output(Mode::Single).map_err(|e| e.to_string())?;
                    let err = rel_err(&got, &want);
                    worst = worst.max(err);
                    check(err <= TOL, || format!("n={n} d={d} m={m} step={step}: rel err {err:e}"))?;
                    gap.record(single.last_row(), got.row(n - 1));
                }

                // same final window reached through different prefixes
                let tail = uniform_input(&mut r, n, d, 1.0);
                let mut outs = Vec::new();
                for (seed, prefix) in [(1u64, 5usize), (2, 2 * n + 3)] {
                    let mut pr = rng(seed_of(n, d, m) * 7 + seed);
                    let mut st = CoNyFixedState::init(&uniform_input(&mut pr, n, d, 1.0), lm.clone(), cfg())
                        .map_err(|e| e.to_string())?;
                    for _ in 0..prefix {
                        let t = next_token(&mut pr, d);
                        st.advance(TokenTriple::from_block(&t, 0)).map_err(|e| e.to_string())?;
                    }
                    outs.push(retro(st.block_step(&tail, Mode::Retroactive).map_err(|e| e.to_string())?));
                }
                let dual = rel_err(&outs[0], &outs[1]);
                check(dual <= TOL, || format!("n={n} d={d} m={m}: dual-stream gap {dual:e}"))?;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(format!("max rel err {worst:.2e} over {configs} configs incl. dual-stream check, {secs:.2} s"))
}

fn criterion_4(gap: &SingleGap) -> Outcome {
    check(gap.checks > 0, || "no single-output comparisons ran".into())?;
    check(gap.worst <= SINGLE_TOL, || format!("max gap {:e}", gap.worst))?;
    Ok(format!("max |single - last row| {:.2e} over {} comparisons", gap.worst, gap.checks))
}

fn cost(v: Variant, n: u64, d: u64, m: u64) -> Result<VariantCost, String> {
    let m = if v.is_nystrom() { m } else { 0 };
    VariantCost::new(v, n, d, m).map_err(|e| e.to_string())
}

fn flops(v: Variant, n: u64, d: u64, m: u64) -> Result<u64, String> {
    cost(v, n, d, m)?.flops().map_err(|e| e.to_string())
}

fn amortized(v: Variant, n: u64, d: u64, m: u64) -> Result<f64, String> {
    cost(v, n, d, m)?.flops_amortized().map_err(|e| e.to_string())
}

fn criterion_5() -> Outcome {
    let (n, d, m) = (120, 192, 4);
    let exact = [
        (Variant::Att, 5_567_160),
        (Variant::CoSi, 69_360),
        (Variant::Ny, 422_688),
        (Variant::NyFix, 371_644),
        (Variant::CoNySiFix, 5_416),
    ];
    for (v, want) in exact {
        let got = flops(v, n, d, m)?;
        check(got == want, || format!("{v}: {got} != {want}"))?;
    }
    let att: f64 = 5_567_160.0;
    let cosi_ratio = att / 69_360.0;
    check((cosi_ratio / 80.26 - 1.0).abs() < 0.01, || format!("CoSi ratio {cosi_ratio}"))?;
    let fix_ratio = att / 5_416.0;
    check((fix_ratio / 1028.0 - 1.0).abs() < 0.01, || format!("CoNySiFix ratio {fix_ratio}"))?;
    let cont = amortized(Variant::CoNySiCont, n, d, m)?;
    check((cont - 10_923.0).abs() < 1.0, || format!("amortized CoNySiCont {cont}"))?;
    let cont_ratio = att / cont;
    check((cont_ratio / 509.66 - 1.0).abs() < 0.01, || format!("CoNySiCont ratio {cont_ratio}"))?;
    let two = cost(Variant::CoNySiCont, n, d, m)?.stacked_flops(2).map_err(|e| e.to_string())?;
    check((two / 0.11e6 - 1.0).abs() < 0.05, || format!("2-layer CoNyCont {two}"))?;
    Ok(format!(
        "Att 5567160, CoSi x{cosi_ratio:.2}, Ny 422688, NyFix 371644, CoNySiFix x{fix_ratio:.0}, \
         CoNySiCont {cont:.1} (x{cont_ratio:.2}), 2-layer {:.3}M",
        two / 1e6
    ))
}

fn criterion_6() -> Outcome {
    let f = flops(Variant::Att, 4, 5, 0)?;
    check(f == 200, || format!("flops(Att) = {f}"))?;
    let mem = cost(Variant::Att, 4, 5, 0)?.memory().map_err(|e| e.to_string())?;
    check(mem == Memory { valley: 57, peak: 97 }, || format!("memory(Att) = {mem:?}"))?;
    // n only has to admit m = 2
    let valley = cost(Variant::CoNySiFix, 2, 5, 2)?.memory().map_err(|e| e.to_string())?.valley;
    check(valley == 36, || format!("CoNySiFix valley = {valley}"))?;
    Ok("flops(Att)=200, memory(Att)=(57, 97), CoNySiFix valley=36".into())
}

fn criterion_7() -> Outcome {
    let (d, m) = (200, 8);
    let ns: Vec<u64> = (6..=12).map(|p| 1u64 << p).collect();
    let fix = flops(Variant::CoNySiFix, 64, d, m)?;
    for &n in &ns {
        let f = flops(Variant::CoNySiFix, n, d, m)?;
        check(f == fix, || format!("CoNySiFix at n={n}: {f} != {fix}"))?;
    }
    let ratio = flops(Variant::Att, 4096, d, m)? as f64 / flops(Variant::Att, 2048, d, m)? as f64;
    check((ratio / 4.0 - 1.0).abs() < 0.05, || format!("Att growth ratio {ratio}"))?;
    for n in 64..=8192 {
        let chain = [
            flops(Variant::CoNySiFix, n, d, m)? as f64,
            amortized(Variant::CoNySiCont, n, d, m)?,
            flops(Variant::CoSi, n, d, m)? as f64,
            flops(Variant::NyFix, n, d, m)? as f64,
            flops(Variant::Ny, n, d, m)? as f64,
            flops(Variant::Att, n, d, m)? as f64,
        ];
        check(chain.windows(2).all(|w| w[0] < w[1]), || format!("ordering broken at n={n}: {chain:?}"))?;
    }
    Ok(format!("CoNySiFix flat at {fix}, Att 4096/2048 ratio {ratio:.4}, ordering holds for n in 64..=8192"))
}

fn criterion_8() -> Outcome {
    let mut worst_res: f64 = 0.0;
    let mut worst_svd: f64 = 0.0;
    let d = 64;
    for i in 0..100u64 {
        let m = 2 + (i as usize % 31);
        let n = 2 * m;
        let mut r = rng(9_000 + i);
        // self-attention stream: queries double as keys
        let mut x = uniform_input(&mut r, n, d, 2.0);
        x.k = x.q.clone();
        let mut s = CoNyContState::init(&x, m, cfg()).map_err(|e| format!("instance {i}: {e}"))?;
        for _ in 0..(i as usize % 7) * 2 + 1 {
            let mut t = uniform_input(&mut r, 1, d, 2.0);
            t.k = t.q.clone();
            s.advance(TokenTriple::from_block(&t, 0)).map_err(|e| format!("instance {i}: {e}"))?;
        }
        let g = s.gamma_phi().map_err(|e| e.to_string())?;
        let z = pinv_iterative(&g, 6).map_err(|e| format!("instance {i} (m={m}): {e}"))?;
        let res = pinv_residual(&g, &z).map_err(|e| e.to_string())?;
        let svd = rel_err(&z, &svd_pinv(&g));
        worst_res = worst_res.max(res);
        worst_svd = worst_svd.max(svd);
        check(res <= 1e-6 && svd <= 1e-5, || format!("instance {i} (m={m}): residual {res:e}, svd gap {svd:e}"))?;
    }
    Ok(format!("100 instances, m in 2..=32: max residual {worst_res:.2e}, max SVD gap {worst_svd:.2e}"))
}

fn criterion_9() -> Outcome {
    let mut non_updated = 0u64;
    let mut updated = 0u64;
    for (n, d, m) in [(8, 2, 2), (16, 8, 4), (120, 8, 8), (20, 4, 4)] {
        let mut r = rng(seed_of(n, d, m) + 3);
        let x = uniform_input(&mut r, n, d, 1.0);
        let mut cont = CoNyContState::init(&x, m, cfg()).map_err(|e| e.to_string())?;
        let mut fixed = CoNyFixedState::init(&x, kmeans_pair(d, m, 4)?, cfg()).map_err(|e| e.to_string())?;
        let fixed_calls = fixed.counters().pinv_calls;
        for step in 0..3 * n {
            let t = next_token(&mut r, d);
            let tok = TokenTriple::from_block(&t, 0);
            let before = cont.counters().pinv_calls;
            let info = cont.advance(tok).map_err(|e| e.to_string())?;
            let calls = cont.counters().pinv_calls - before;
            if info.landmark_updated {
                updated += 1;
                check(calls == 1, || format!("n={n} m={m} step={step}: {calls} calls on an update step"))?;
            } else {
                non_updated += 1;
                check(calls == 0, || format!("n={n} m={m} step={step}: {calls} calls on a non-updated step"))?;
            }
            fixed.advance(tok).map_err(|e| e.to_string())?;
        }
        let extra = fixed.counters().pinv_calls - fixed_calls;
        check(extra == 0, || format!("fixed landmarks ran pinv {extra} times while stepping"))?;
    }
    Ok(format!("0 pinv calls on {non_updated} non-updated and all fixed-landmark steps; 1 on each of {updated} update steps"))
}

fn criterion_10() -> Outcome {
    let (n, d, m) = (4096, 200, 8);
    let mut r = rng(10);
    let x = uniform_input(&mut r, n, d, 1.0);
    let lm = kmeans_pair(d, m, 10)?;
    let mut s = CoNyFixedState::init(&x, lm, cfg()).map_err(|e| e.to_string())?;
    let tokens = uniform_input(&mut r, 2 * 1024, d, 1.0);
    for i in 0..1024 {
        s.step_single(TokenTriple::from_block(&tokens, i)).map_err(|e| e.to_string())?;
    }
    let start = Instant::now();
    let mut sink = 0.0;
    for i in 1024..2048 {
        sink += s.step_single(TokenTriple::from_block(&tokens, i)).map_err(|e| e.to_string())?[0];
    }
    let fast = start.elapsed() / 1024;

    let mut win = SlidingWindow::new(x);
    let mut total = Duration::ZERO;
    let reps = 3;
    for i in 0..reps {
        win.push(tokens.q.row(i), tokens.k.row(i), tokens.v.row(i));
        let t0 = Instant::now();
        sink += sda_exact(&win.x).map_err(|e| e.to_string())?.get(n - 1, 0);
        total += t0.elapsed();
    }
    std::hint::black_box(sink);
    let slow = total / reps as u32;
    let ratio = slow.as_secs_f64() / fast.as_secs_f64();
    check(ratio >= 50.0, || format!("speed-up only x{ratio:.1} ({fast:?} vs {slow:?})"))?;
    Ok(format!("CoNySiFix {fast:?}/step vs sda_exact {slow:?}/step: x{ratio:.0}"))
}

fn main() {
    let mut gap = SingleGap::default();
    let results: Vec<(&str, Outcome)> = vec![
        ("1 exact continual equivalence", criterion_1(&mut gap)),
        ("2 continual-landmark Nystrom equivalence", criterion_2(&mut gap)),
        ("3 fixed-landmark Nystrom equivalence", criterion_3(&mut gap)),
        ("4 single output equals last retroactive row", criterion_4(&gap)),
        ("5 one- and two-layer FLOPs at n=120 d=192 m=4", criterion_5()),
        ("6 small-size FLOP and memory spot values", criterion_6()),
        ("7 asymptotics at d=200 m=8", criterion_7()),
        ("8 pseudo-inverse contract", criterion_8()),
        ("9 no pseudo-inverse off the update path", criterion_9()),
        ("10 wall-clock speed-up at n=4096", criterion_10()),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
