use proptest::prelude::*;

use jules::analysis::{classify, max_devirt_table, table_optimizes};
use jules::fuzz::{gen_program, GenConfig};
use jules::infer::{infer_method, InferenceCache};
use jules::interp::{run, Entry, Outcome, RunOptions, Semantics};
use jules::ir::{originals, validate, MethodTable, Type, TypeTable};
use jules::jit::jit_compile;
use jules::textio::{parse_program, print_program, ParseMode};
use jules::typesys::{dispatch, is_subtype, join_types, sig_subtype};

fn config() -> impl Strategy<Value = GenConfig> {
    (any::<u64>(), 1usize..7, 1usize..4, 1usize..9, 0usize..3, 0usize..4).prop_map(
        |(seed, max_types, max_methods_per_name, max_body_len, max_arity, max_call_depth_bias)| GenConfig {
            seed,
            max_types,
            max_methods_per_name,
            max_body_len,
            max_arity,
            max_call_depth_bias,
        },
    )
}

fn jit_run(tt: &TypeTable, mt: &MethodTable, fuel: u64) -> jules::interp::RunResult {
    run(
        tt,
        mt,
        &Entry::main(),
        &RunOptions {
            fuel,
            semantics: Semantics::Jit,
            ..Default::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn generated_programs_are_well_formed(cfg in config()) {
        let (tt, mt) = gen_program(&cfg);
        prop_assert!(validate(&tt, &mt).is_empty());
        prop_assert_eq!(validate(&tt, &mt), validate(&tt, &mt));
        prop_assert_eq!(gen_program(&cfg), (tt, mt));
    }

    #[test]
    fn print_parse_identity(cfg in config()) {
        let (tt, mt) = gen_program(&cfg);
        let text = print_program(&tt, &mt);
        let back = parse_program(&text, ParseMode::Source).unwrap();
        prop_assert_eq!(print_program(&back.0, &back.1), text);
        prop_assert_eq!(back, (tt, mt));
    }

    #[test]
    fn lattice_laws_on_generated_tables(cfg in config()) {
        let (tt, _) = gen_program(&cfg);
        let all = tt.all_types();
        for x in &all {
            for y in &all {
                let j = join_types(&tt, x, y);
                prop_assert!(is_subtype(&tt, x, &j) && is_subtype(&tt, y, &j));
                for u in all.iter().filter(|u| is_subtype(&tt, x, u) && is_subtype(&tt, y, u)) {
                    prop_assert!(is_subtype(&tt, &j, u));
                }
                if is_subtype(&tt, x, y) && is_subtype(&tt, y, x) {
                    prop_assert_eq!(x, y);
                }
            }
        }
    }

    #[test]
    fn dispatch_picks_the_most_specific_applicable(cfg in config()) {
        let (tt, mt) = gen_program(&cfg);
        let concretes: Vec<Type> = tt.all_types().into_iter().filter(Type::is_concrete).collect();
        for name in mt.names() {
            let arity = mt.methods_named(name).next().unwrap().params.len();
            if arity > 2 {
                continue;
            }
            let mut sigs: Vec<Vec<Type>> = vec![vec![]];
            for _ in 0..arity {
                sigs = sigs
                    .into_iter()
                    .flat_map(|s| concretes.iter().map(move |c| { let mut s = s.clone(); s.push(c.clone()); s }))
                    .collect();
            }
            for args in sigs {
                let applicable: Vec<_> = mt.methods_named(name).filter(|m| sig_subtype(&tt, &args, &m.params)).collect();
                let best: Vec<_> = applicable
                    .iter()
                    .filter(|m| applicable.iter().all(|o| sig_subtype(&tt, &m.params, &o.params)))
                    .collect();
                match dispatch(&tt, &mt, name, &args) {
                    Ok(m) => prop_assert!(best.len() == 1 && m.params == best[0].params),
                    Err(_) => prop_assert!(best.is_empty()),
                }
            }
        }
    }

    #[test]
    fn runs_are_deterministic(cfg in config()) {
        let (tt, mt) = gen_program(&cfg);
        let opts = RunOptions { fuel: 3000, semantics: Semantics::Jit, trace: true, ..Default::default() };
        let a = run(&tt, &mt, &Entry::main(), &opts);
        let b = run(&tt, &mt, &Entry::main(), &opts);
        prop_assert_eq!(&a.outcome, &b.outcome);
        prop_assert_eq!(a.trace, b.trace);
        prop_assert_eq!(a.table, b.table);
    }

    #[test]
    fn compiled_tables_keep_their_invariants(cfg in config()) {
        let (tt, mt) = gen_program(&cfg);
        let compiled = jit_run(&tt, &mt, 3000).table;
        prop_assert_eq!(originals(&compiled), mt.clone());
        prop_assert_eq!(originals(&originals(&compiled)), originals(&compiled));
        prop_assert!(!compiled.has_stubs());
        prop_assert!(validate(&tt, &compiled).is_empty());
        prop_assert!(max_devirt_table(&tt, &compiled).is_ok());
        prop_assert!(table_optimizes(&tt, &mt, &compiled).is_ok());
        prop_assert_eq!(&jit_compile(&tt, &compiled, "main", &[]), &compiled);
    }

    #[test]
    fn grounded_implies_stable(cfg in config()) {
        let (tt, mt) = gen_program(&cfg);
        let compiled = jit_run(&tt, &mt, 3000).table;
        for m in compiled.iter() {
            let r = classify(&tt, &compiled, &m.name, &m.params).unwrap();
            prop_assert!(!r.grounded || r.stable);
            prop_assert_eq!(r.stable, r.return_type.is_concrete());
        }
    }

    #[test]
    fn inference_ignores_cache_warm_up(cfg in config(), order in any::<u64>()) {
        let (tt, mt) = gen_program(&cfg);
        let compiled = jit_run(&tt, &mt, 2000).table;
        let keys: Vec<(String, Vec<Type>)> = compiled.iter().map(|m| (m.name.to_string(), m.params.clone())).collect();
        let mut shuffled = keys.clone();
        let k = shuffled.len().max(1);
        shuffled.rotate_left((order as usize) % k);
        shuffled.reverse();
        let mut c1 = InferenceCache::default();
        let mut c2 = InferenceCache::default();
        let first: Vec<_> = keys.iter().map(|(n, s)| infer_method(&tt, &mt, n, s, &mut c1)).collect();
        let mut second: Vec<_> = shuffled.iter().map(|(n, s)| (n.clone(), s.clone(), infer_method(&tt, &mt, n, s, &mut c2))).collect();
        second.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        for ((_, _, b), a) in second.iter().zip(&first) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn more_fuel_never_changes_a_finished_run(cfg in config()) {
        let (tt, mt) = gen_program(&cfg);
        let opts = |fuel| RunOptions { fuel, ..Default::default() };
        let short = run(&tt, &mt, &Entry::main(), &opts(500));
        let long = run(&tt, &mt, &Entry::main(), &opts(5000));
        match short.outcome {
            Outcome::FuelExhausted { steps } => prop_assert_eq!(steps, 500),
            o => prop_assert_eq!(o, long.outcome),
        }
    }
}

#[test]
fn generator_covers_interesting_programs() {
    let (mut erred, mut unstable, mut grounded_multi_call) = (0, 0, 0);
    for seed in 0..1000 {
        let (tt, mt) = gen_program(&GenConfig::with_seed(seed));
        let r = jit_run(&tt, &mt, 2000);
        if matches!(r.outcome, Outcome::Erred { .. }) {
            erred += 1;
        }
        let mut any_unstable = false;
        let mut any_grounded_calls = false;
        for m in r.table.iter() {
            let Ok(c) = classify(&tt, &r.table, &m.name, &m.params) else { continue };
            any_unstable |= !c.stable;
            let calls = m.instrs().iter().filter(|i| i.is_dispatch() || i.is_invoke()).count();
            any_grounded_calls |= c.grounded && calls >= 2;
        }
        unstable += any_unstable as usize;
        grounded_multi_call += any_grounded_calls as usize;
    }
    assert!(erred > 0, "no erring program");
    assert!(unstable > 0, "no unstable method");
    assert!(grounded_multi_call > 0, "no grounded method with several calls");
}

#[test]
fn deeply_shared_values_stay_comparable() {
    let cfg = GenConfig {
        seed: 14191188315169588722,
        max_types: 4,
        max_methods_per_name: 3,
        max_body_len: 3,
        max_arity: 2,
        max_call_depth_bias: 3,
    };
    let (tt, mt) = gen_program(&cfg);
    let opts = RunOptions { fuel: 3000, semantics: Semantics::Jit, trace: true, ..Default::default() };
    let a = run(&tt, &mt, &Entry::main(), &opts);
    let b = run(&tt, &mt, &Entry::main(), &opts);
    assert_eq!(a.trace, b.trace);
}
