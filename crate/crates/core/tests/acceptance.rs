//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero if any criterion fails.

use std::panic;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use jules::analysis::{census, classify};
use jules::fuzz::{aot_test, diff_test, gen_program, DiffVerdict, GenConfig, PropertyKind};
use jules::infer::{infer_body, InferenceCache};
use jules::interp::{run, Entry, RunOptions, Semantics};
use jules::ir::{originals, MethodTable, Type, TypeTable};
use jules::textio::{parse_bytes, parse_program, print_program, ParseMode};
use jules::typesys::is_subtype;

const SEEDS: u64 = 10_000;
const FUEL: u64 = 10_000;
const PT: &str = include_str!("fixtures/pt.jules");

struct SeedRun {
    seed: u64,
    diff: DiffVerdict,
    aot: DiffVerdict,
}

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, n: u32, ok: bool, what: &str) {
        if !ok {
            self.failed += 1;
        }
        println!("[{}] criterion {n}: {what}", if ok { "PASS" } else { "FAIL" });
    }
}

fn count(runs: &[SeedRun], kind: PropertyKind) -> usize {
    runs.iter()
        .map(|r| r.diff.failures_of(kind.clone()) + r.aot.failures_of(kind.clone()))
        .sum()
}

fn first_failure(runs: &[SeedRun], pred: impl Fn(&SeedRun) -> bool) -> String {
    runs.iter()
        .find(|r| pred(r))
        .map(|r| {
            format!(
                " (first: seed {} {:?} {:?})",
                r.seed,
                r.diff.property_failures.first().or(r.aot.property_failures.first()),
                (r.diff.step_counts(), r.aot.step_counts())
            )
        })
        .unwrap_or_default()
}

fn corpus() -> Vec<SeedRun> {
    (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let (tt, mt) = gen_program(&GenConfig::with_seed(seed));
            let entry = Entry::main();
            SeedRun {
                seed,
                diff: diff_test(&tt, &mt, &entry, FUEL),
                aot: aot_test(&tt, &mt, &entry, FUEL),
            }
        })
        .collect()
}

/// Refines each parameter type to a random subtype.
fn refine(rng: &mut ChaCha8Rng, tt: &TypeTable, sig: &[Type]) -> Vec<Type> {
    let all = tt.all_types();
    sig.iter()
        .map(|t| {
            let below: Vec<&Type> = all.iter().filter(|s| is_subtype(tt, s, t)).collect();
            below[rng.gen_range(0..below.len())].clone()
        })
        .collect()
}

fn monotonicity() -> (usize, usize, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut tried, mut ok) = (0, 0);
    let mut first = String::new();
    let mut seed = 0;
    while tried < 1000 {
        let (tt, mt) = gen_program(&GenConfig::with_seed(1_000_000 + seed));
        seed += 1;
        let mut cache = InferenceCache::default();
        for m in mt.iter() {
            if tried >= 1000 || !m.params.iter().any(|t| !t.is_concrete()) {
                continue;
            }
            let refined = refine(&mut rng, &tt, &m.params);
            if refined == m.params {
                continue;
            }
            tried += 1;
            let coarse = infer_body(&tt, &mt, &m.params, m.instrs(), &mut cache);
            let fine = infer_body(&tt, &mt, &refined, m.instrs(), &mut cache);
            match (&coarse, &fine) {
                (Ok(c), Ok(f)) if c.len() == f.len() && f.0.iter().zip(&c.0).all(|(a, b)| is_subtype(&tt, a, b)) => {
                    ok += 1
                }
                _ if first.is_empty() => first = format!(" (first: {m} at {refined:?}: {coarse:?} vs {fine:?})"),
                _ => {}
            }
        }
    }
    (tried, ok, first)
}

fn fixtures() -> Vec<(String, bool)> {
    let (tt, mt) = parse_program(PT, ParseMode::Source).unwrap();
    let pt = Type::concrete("Pt");
    let mut out = Vec::new();
    let r = classify(&tt, &mt, "f", &[pt.clone()]).unwrap();
    out.push(("f at Pt stable and grounded".into(), r.stable && r.grounded));
    let r = classify(&tt, &mt, "f", &[Type::abstract_("APt")]).unwrap();
    out.push(("f at APt unstable".into(), !r.stable));

    let branches = "type A() <: S
        type B() <: S
        method one() { %0 = const 1 }
        method mkb() { %0 = new B() }
        method f1(Int) { %1 = const 0 %2 = if %0 call one() else %1 }
        method f0(Int) { %1 = new A() %2 = if %0 call mkb() else %1 }
        method main() { %0 = const 1 %1 = if %0 call f1(%0) else %0 %2 = if %0 call f0(%0) else %0 }";
    let (bt, bm) = parse_program(branches, ParseMode::Source).unwrap();
    let f1 = classify(&bt, &bm, "f1", &[Type::int()]).unwrap();
    out.push(("f1-analog stable".into(), f1.stable));
    let f0 = classify(&bt, &bm, "f0", &[Type::int()]).unwrap();
    out.push((
        "f0-analog unstable with return S".into(),
        !f0.stable && f0.return_type == Type::abstract_("S"),
    ));

    let jitted = run(
        &tt,
        &mt,
        &Entry::main(),
        &RunOptions {
            fuel: 1000,
            semantics: Semantics::Jit,
            ..Default::default()
        },
    );
    let c = census(&tt, &jitted.table);
    out.push((
        "PT census after jit: 1 instance, 1.0/1.0".into(),
        c.instance_count == 1 && c.stable_fraction == 1.0 && c.grounded_fraction == 1.0,
    ));
    out
}

fn round_trip(tt: &TypeTable, mt: &MethodTable, mode: ParseMode) -> bool {
    let text = print_program(tt, mt);
    match parse_program(&text, mode) {
        Ok((t2, m2)) => &t2 == tt && &m2 == mt && print_program(&t2, &m2) == text,
        Err(_) => false,
    }
}

fn random_inputs(n: usize) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let alphabet: &[u8] = b"%=(){}[],<:#-0123456789 \n\ttype method const reg new field if call invoke else Int Any Pt origin:";
    (0..n)
        .map(|i| {
            let len = rng.gen_range(0..256);
            match i % 3 {
                0 => (0..len).map(|_| rng.gen()).collect(),
                1 => (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect(),
                _ => {
                    let mut b = PT.as_bytes().to_vec();
                    for _ in 0..rng.gen_range(1..8) {
                        let at = rng.gen_range(0..b.len());
                        match rng.gen_range(0..3) {
                            0 => b[at] = rng.gen(),
                            1 => {
                                b.remove(at);
                            }
                            _ => b.insert(at, alphabet[rng.gen_range(0..alphabet.len())]),
                        }
                    }
                    b
                }
            }
        })
        .collect()
}

fn main() {
    let mut report = Report { failed: 0 };
    let start = Instant::now();
    let runs = corpus();
    let elapsed = start.elapsed();
    let n = runs.len();

    let erred = runs.iter().filter(|r| r.diff.dispatch.class() == "erred").count();
    let exhausted = runs.iter().filter(|r| r.diff.dispatch.class() == "fuel_exhausted").count();
    let instances: usize = runs.iter().map(|r| r.diff.jit_table.instances().count()).sum();
    println!(
        "corpus: {n} programs in {:.1}s, {erred} erred, {exhausted} fuel exhausted, {instances} compiled instances",
        elapsed.as_secs_f64()
    );

    let bisim = runs
        .iter()
        .filter(|r| r.diff.matched && r.diff.step_counts().0 == r.diff.step_counts().1)
        .count();
    report.line(
        1,
        bisim == n,
        &format!(
            "dispatch vs jit match on {bisim}/{n} seeds{}",
            first_failure(&runs, |r| !r.diff.matched)
        ),
    );

    let aot = runs.iter().filter(|r| r.aot.matched).count();
    report.line(
        2,
        aot == n,
        &format!("aot match on {aot}/{n} seeds{}", first_failure(&runs, |r| !r.aot.matched)),
    );

    let g = count(&runs, PropertyKind::GroundedDevirt);
    report.line(3, g == 0, &format!("{g} grounded instances with dispatched calls"));

    let md = count(&runs, PropertyKind::MaxDevirt);
    let to = count(&runs, PropertyKind::TableOptimizes);
    report.line(
        4,
        md == 0 && to == 0,
        &format!("{md} max-devirtualization failures, {to} optimization-relation failures"),
    );

    let wrong = count(&runs, PropertyKind::NeverWrong);
    report.line(5, wrong == 0, &format!("{wrong} wrong outcomes"));

    let (tried, ok, first) = monotonicity();
    report.line(
        6,
        tried == ok && tried == 1000,
        &format!("refined inference monotone on {ok}/{tried} triples{first}"),
    );

    let unsound = count(&runs, PropertyKind::Soundness);
    report.line(7, unsound == 0, &format!("{unsound} register-type violations"));

    let calls: usize = runs.iter().map(|r| r.diff.calls_checked).sum();
    let cs = count(&runs, PropertyKind::CalleeStability);
    report.line(
        8,
        cs == 0,
        &format!("{cs} unstable callees from grounded activations over {calls} executed calls"),
    );

    let fx = fixtures();
    let bad: Vec<&str> = fx.iter().filter(|(_, ok)| !ok).map(|(s, _)| s.as_str()).collect();
    report.line(
        9,
        bad.is_empty(),
        &format!("{}/{} fixture verdicts{}", fx.len() - bad.len(), fx.len(), if bad.is_empty() { String::new() } else { format!(" (failed: {})", bad.join("; ")) }),
    );

    let rt = (0..1000u64)
        .into_par_iter()
        .filter(|&s| {
            let (tt, mt) = gen_program(&GenConfig::with_seed(s));
            let compiled = run(
                &tt,
                &mt,
                &Entry::main(),
                &RunOptions {
                    fuel: 2000,
                    semantics: Semantics::Jit,
                    ..Default::default()
                },
            )
            .table;
            round_trip(&tt, &mt, ParseMode::Source)
                && round_trip(&tt, &compiled, ParseMode::Compiled)
                && originals(&compiled) == mt
        })
        .count();
    let inputs = random_inputs(10_000);
    let prev = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let crashes = inputs
        .iter()
        .filter(|b| {
            panic::catch_unwind(|| {
                let _ = parse_bytes(b, ParseMode::Source);
                let _ = parse_bytes(b, ParseMode::Compiled);
            })
            .is_err()
        })
        .count();
    panic::set_hook(prev);
    report.line(
        10,
        rt == 1000 && crashes == 0,
        &format!("round trip on {rt}/1000 programs, {crashes} parser crashes on {} random inputs", inputs.len()),
    );

    if report.failed > 0 {
        println!("{} criteria failed", report.failed);
        std::process::exit(1);
    }
}
