use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use jules::analysis::{census, classify, StabilityReport};
use jules::fuzz::{aot_test, diff_test, gen_program, shrink, DiffVerdict, GenConfig};
use jules::infer::infer_method;
use jules::infer::InferenceCache;
use jules::interp::{run, Entry, Outcome, RunOptions, Semantics};
use jules::ir::{originals, validate, MethodTable, Type, TypeTable};
use jules::jit::jit_compile;
use jules::textio::{format_trace_line, parse_bytes, parse_entry, print_program, report_to_json, ParseMode};

const EXIT_DIAGNOSTICS: u8 = 1;
const EXIT_ERRED: u8 = 2;
const EXIT_WRONG: u8 = 3;
const EXIT_FUEL: u8 = 4;
const EXIT_MISMATCH: u8 = 5;
const EXIT_USAGE: u8 = 64;
const EXIT_NO_INPUT: u8 = 66;

#[derive(Parser)]
#[command(name = "jules", version, about = "Run, compile and analyze jules IR programs")]
struct Cli {
    /// Accept compiled-table dumps (instances and direct calls).
    #[arg(long, global = true)]
    compiled: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SemanticsArg {
    Dispatch,
    Jit,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a program.
    Check { file: PathBuf },
    /// Execute a program.
    Run {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "dispatch")]
        semantics: SemanticsArg,
        #[arg(long, default_value_t = 100_000)]
        fuel: u64,
        /// Print one line per step.
        #[arg(long)]
        trace: bool,
        /// Check every register against its inferred type.
        #[arg(long)]
        check_soundness: bool,
        /// Entry call, e.g. `main()` or `f(Pt(1, 2), 3)`.
        #[arg(long, default_value = "main()")]
        entry: String,
    },
    /// Print the register typing of a method at a signature.
    Infer {
        file: PathBuf,
        #[arg(long)]
        method: String,
        /// Comma-separated argument types.
        #[arg(long, default_value = "")]
        sig: String,
    },
    /// Print stability reports.
    Analyze {
        file: PathBuf,
        #[arg(long, requires = "sig")]
        method: Option<String>,
        #[arg(long, requires = "method")]
        sig: Option<String>,
        /// Report every method at its own signature.
        #[arg(long, conflicts_with = "method")]
        all: bool,
    },
    /// Compile a method at concrete argument types and dump the table.
    Compile {
        file: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long, default_value = "")]
        sig: String,
        #[arg(short = 'o', long)]
        out: Option<PathBuf>,
    },
    /// Run under the JIT and print a census of the compiled instances.
    Stats {
        file: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        fuel: u64,
    },
    /// Compare dispatch and JIT semantics on generated programs.
    Difftest {
        /// Seed range `A..B` (end exclusive).
        #[arg(long, default_value = "0..100", value_parser = parse_range)]
        seeds: (u64, u64),
        #[arg(long, default_value_t = 10_000)]
        fuel: u64,
        /// Compare the original table against the harvested compiled table.
        #[arg(long)]
        aot: bool,
        /// Directory for repro files of mismatches.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Writes a line to stdout; a closed pipe is not an error.
fn say(line: impl Display) {
    let _ = writeln!(io::stdout().lock(), "{line}");
}

fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once("..").ok_or("expected A..B")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if a > b {
        return Err("empty range".into());
    }
    Ok((a, b))
}

/// A failed command with its exit code.
struct Fail(u8, String);

type CmdResult = Result<u8, Fail>;

fn load(path: &Path, mode: ParseMode) -> Result<(TypeTable, MethodTable), Fail> {
    let bytes = fs::read(path).map_err(|e| Fail(EXIT_NO_INPUT, format!("{}: {e}", path.display())))?;
    parse_bytes(&bytes, mode).map_err(|errs| {
        let msg = errs
            .iter()
            .map(|e| format!("{}:{e}", path.display()))
            .collect::<Vec<_>>()
            .join("\n");
        Fail(EXIT_DIAGNOSTICS, msg)
    })
}

fn load_valid(path: &Path, mode: ParseMode) -> Result<(TypeTable, MethodTable), Fail> {
    let (tt, mt) = load(path, mode)?;
    let diags = validate(&tt, &mt);
    if diags.is_empty() {
        Ok((tt, mt))
    } else {
        Err(Fail(EXIT_DIAGNOSTICS, diag_text(path, &diags)))
    }
}

fn diag_text(path: &Path, diags: &[jules::ir::Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("{}: {d}", path.display()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn parse_sig(tt: &TypeTable, sig: &str) -> Result<Vec<Type>, Fail> {
    sig.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| {
            let t = tt.resolve(name);
            if tt.is_declared(&t) {
                Ok(t)
            } else {
                Err(Fail(EXIT_USAGE, format!("unknown type `{name}`")))
            }
        })
        .collect()
}

fn outcome_code(o: &Outcome) -> u8 {
    match o {
        Outcome::Finished { .. } => 0,
        Outcome::Erred { .. } => EXIT_ERRED,
        Outcome::Wrong { .. } => EXIT_WRONG,
        Outcome::FuelExhausted { .. } => EXIT_FUEL,
    }
}

fn mode(cli: &Cli) -> ParseMode {
    if cli.compiled {
        ParseMode::Compiled
    } else {
        ParseMode::Source
    }
}

fn dispatch_cmd(cli: &Cli) -> CmdResult {
    let mode = mode(cli);
    match &cli.command {
        Command::Check { file } => {
            let (tt, mt) = load(file, mode)?;
            let diags = validate(&tt, &mt);
            if diags.is_empty() {
                say(format!("{}: ok", file.display()));
                Ok(0)
            } else {
                Err(Fail(EXIT_DIAGNOSTICS, diag_text(file, &diags)))
            }
        }
        Command::Run {
            file,
            semantics,
            fuel,
            trace,
            check_soundness,
            entry,
        } => {
            let (tt, mt) = load_valid(file, mode)?;
            let entry = parse_entry(&tt, entry).map_err(|e| Fail(EXIT_USAGE, format!("--entry: {e}")))?;
            let opts = RunOptions {
                fuel: *fuel,
                semantics: match semantics {
                    SemanticsArg::Dispatch => Semantics::Dispatch,
                    SemanticsArg::Jit => Semantics::Jit,
                },
                check_soundness: *check_soundness,
                record_calls: false,
                trace: *trace,
            };
            let r = run(&tt, &mt, &entry, &opts);
            for (step, ev) in &r.trace {
                say(format_trace_line(*step, ev));
            }
            say(&r.outcome);
            for v in &r.soundness_violations {
                eprintln!("soundness violation: {v}");
            }
            Ok(outcome_code(&r.outcome))
        }
        Command::Infer { file, method, sig } => {
            let (tt, mt) = load_valid(file, mode)?;
            let sig = parse_sig(&tt, sig)?;
            let origs = originals(&mt);
            let typing = infer_method(&tt, &origs, method, &sig, &mut InferenceCache::default())
                .map_err(|e| Fail(EXIT_DIAGNOSTICS, e.to_string()))?;
            say(report_to_json(&*typing));
            Ok(0)
        }
        Command::Analyze {
            file,
            method,
            sig,
            all,
        } => {
            let (tt, mt) = load_valid(file, mode)?;
            let reports: Vec<StabilityReport> = match (method, sig, all) {
                (Some(m), Some(s), false) => {
                    let sig = parse_sig(&tt, s)?;
                    vec![classify(&tt, &mt, m, &sig).map_err(|e| Fail(EXIT_DIAGNOSTICS, e.to_string()))?]
                }
                (None, None, true) => mt
                    .iter()
                    .map(|m| classify(&tt, &mt, &m.name, &m.params))
                    .collect::<Result<_, _>>()
                    .map_err(|e| Fail(EXIT_DIAGNOSTICS, e.to_string()))?,
                _ => return Err(Fail(EXIT_USAGE, "analyze needs --method and --sig, or --all".into())),
            };
            if *all {
                say(report_to_json(&reports));
            } else {
                say(report_to_json(&reports[0]));
            }
            Ok(0)
        }
        Command::Compile {
            file,
            method,
            sig,
            out,
        } => {
            let (tt, mt) = load_valid(file, mode)?;
            let sig = parse_sig(&tt, sig)?;
            if !sig.iter().all(Type::is_concrete) {
                return Err(Fail(EXIT_USAGE, "compile needs concrete argument types".into()));
            }
            if jules::typesys::dispatch(&tt, &mt, method, &sig).is_err() {
                return Err(Fail(EXIT_DIAGNOSTICS, format!("no unique method {method} for the signature")));
            }
            let text = print_program(&tt, &jit_compile(&tt, &mt, method, &sig));
            match out {
                Some(p) => fs::write(p, text).map_err(|e| Fail(EXIT_NO_INPUT, format!("{}: {e}", p.display())))?,
                None => {
                    let _ = io::stdout().lock().write_all(text.as_bytes());
                }
            }
            Ok(0)
        }
        Command::Stats { file, fuel } => {
            let (tt, mt) = load_valid(file, mode)?;
            let opts = RunOptions {
                fuel: *fuel,
                semantics: Semantics::Jit,
                ..Default::default()
            };
            let r = run(&tt, &mt, &Entry::main(), &opts);
            eprintln!("{}", r.outcome);
            say(report_to_json(&census(&tt, &r.table)));
            Ok(0)
        }
        Command::Difftest {
            seeds,
            fuel,
            aot,
            out,
        } => difftest(*seeds, *fuel, *aot, out.as_deref()),
    }
}

fn difftest(seeds: (u64, u64), fuel: u64, aot: bool, out: Option<&Path>) -> CmdResult {
    let test = if aot { aot_test } else { diff_test };
    let entry = Entry::main();
    let mismatches: Vec<(u64, DiffVerdict, TypeTable, MethodTable)> = (seeds.0..seeds.1)
        .into_par_iter()
        .filter_map(|seed| {
            let (tt, mt) = gen_program(&GenConfig::with_seed(seed));
            let v = test(&tt, &mt, &entry, fuel);
            (!v.matched).then(|| {
                let (st, sm) = shrink(&tt, &mt, |t, m| !test(t, m, &entry, fuel).matched);
                let v = test(&st, &sm, &entry, fuel).with_program(seed, &st, &sm);
                (seed, v, st, sm)
            })
        })
        .collect();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Fail(EXIT_NO_INPUT, format!("{}: {e}", dir.display())))?;
        for (seed, v, tt, mt) in &mismatches {
            let write = |name: String, text: String| {
                let p = dir.join(name);
                fs::write(&p, text).map_err(|e| Fail(EXIT_NO_INPUT, format!("{}: {e}", p.display())))
            };
            write(format!("seed-{seed}.jules"), print_program(tt, mt))?;
            write(format!("seed-{seed}.json"), report_to_json(v))?;
        }
    }
    for (_, v, _, _) in &mismatches {
        say(report_to_json(v));
    }
    let total = seeds.1 - seeds.0;
    eprintln!("{} of {total} seeds matched", total - mismatches.len() as u64);
    Ok(if mismatches.is_empty() { 0 } else { EXIT_MISMATCH })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match dispatch_cmd(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("{msg}");
            ExitCode::from(code)
        }
    }
}
