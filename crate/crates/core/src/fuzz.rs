//! Seeded generation of well-formed programs, the differential harness
//! comparing dispatch and JIT semantics, and a greedy shrinker.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::analysis::{classify_with, fully_devirtualized, max_devirt_table, table_optimizes, StabilityReport};
use crate::infer::{CallKey, Inferencer};
use crate::interp::{run, Entry, Outcome, RunOptions, RunResult, Semantics};
use crate::ir::{
    originals, validate, Body, Instr, Method, MethodTable, Op, Reg, Type, TypeDecl, TypeTable, MAIN,
};
use crate::textio::print_program;
use crate::typesys::is_subtype;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenConfig {
    pub seed: u64,
    pub max_types: usize,
    pub max_methods_per_name: usize,
    pub max_body_len: usize,
    pub max_arity: usize,
    /// Extra weight on call instructions; 0 keeps them as likely as any
    /// other instruction.
    pub max_call_depth_bias: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            max_types: 5,
            max_methods_per_name: 3,
            max_body_len: 6,
            max_arity: 2,
            max_call_depth_bias: 2,
        }
    }
}

impl GenConfig {
    pub fn with_seed(seed: u64) -> Self {
        GenConfig {
            seed,
            ..Default::default()
        }
    }
}

struct Gen<'c> {
    rng: ChaCha8Rng,
    cfg: &'c GenConfig,
    types: TypeTable,
    /// Concrete struct names in declaration order.
    structs: Vec<Type>,
    abstracts: Vec<Type>,
    /// Method names with their arity and declared signatures.
    names: Vec<(String, usize, Vec<Vec<Type>>)>,
}

/// Builder for one body. `view` types every register conservatively: call
/// results are `Any`, so every constraint that holds for the view also
/// holds for the inferred types.
struct BodyGen {
    view: Vec<Type>,
    instrs: Vec<Instr>,
}

impl BodyGen {
    fn push(&mut self, op: Op, ty: Type) -> Reg {
        let r = Reg(self.view.len());
        self.instrs.push(Instr { target: r, op });
        self.view.push(ty);
        r
    }
}

impl Gen<'_> {
    fn types_gen(&mut self) {
        let n_abs = self.rng.gen_range(1..=3usize);
        self.abstracts = (0..n_abs).map(|i| Type::abstract_(&format!("S{i}"))).collect();
        let n_conc = self.rng.gen_range(n_abs.min(self.cfg.max_types)..=self.cfg.max_types.max(1));
        let mut declared_abs: Vec<Type> = Vec::new();
        for i in 0..n_conc {
            let sup = if i < n_abs {
                self.abstracts[i].clone()
            } else {
                self.abstracts.choose(&mut self.rng).unwrap().clone()
            };
            let nfields = self.rng.gen_range(0..=2);
            let mut fields = Vec::new();
            for _ in 0..nfields {
                let mut pool = vec![Type::int(), Type::any()];
                pool.extend(self.structs.iter().cloned());
                pool.extend(declared_abs.iter().cloned());
                fields.push(pool.choose(&mut self.rng).unwrap().clone());
            }
            let name = format!("C{i}");
            self.types
                .declare(TypeDecl {
                    name: name.as_str().into(),
                    fields,
                    supertype: sup.name().clone(),
                })
                .expect("generated names are fresh");
            if !declared_abs.contains(&sup) {
                declared_abs.push(sup);
            }
            self.structs.push(Type::concrete(&name));
        }
        self.abstracts = declared_abs;
    }

    fn param_type(&mut self) -> Type {
        let r = self.rng.gen_range(0..10);
        match r {
            0..=3 if !self.abstracts.is_empty() => self.abstracts.choose(&mut self.rng).unwrap().clone(),
            4 => Type::any(),
            5..=6 => Type::int(),
            _ => self
                .structs
                .choose(&mut self.rng)
                .cloned()
                .unwrap_or_else(Type::int),
        }
    }

    fn signatures(&mut self) {
        let n_names = self.rng.gen_range(2..=5);
        for i in 0..n_names {
            let arity = self.rng.gen_range(0..=self.cfg.max_arity);
            let want = if arity == 0 {
                1
            } else {
                self.rng.gen_range(1..=self.cfg.max_methods_per_name.max(1))
            };
            let mut sigs: Vec<Vec<Type>> = Vec::new();
            for _ in 0..want * 3 {
                if sigs.len() == want {
                    break;
                }
                let sig: Vec<Type> = (0..arity).map(|_| self.param_type()).collect();
                if !sigs.contains(&sig) {
                    sigs.push(sig);
                }
            }
            self.names.push((format!("f{i}"), arity, sigs));
        }
    }

    /// A register whose view type is below `ty`, building one if needed.
    fn value_of(&mut self, b: &mut BodyGen, ty: &Type, depth: usize) -> Reg {
        let fits: Vec<Reg> = (0..b.view.len())
            .filter(|&i| is_subtype(&self.types, &b.view[i], ty))
            .map(Reg)
            .collect();
        if !fits.is_empty() && (depth > 2 || self.rng.gen_bool(0.7)) {
            return *fits.choose(&mut self.rng).unwrap();
        }
        let concrete = match ty {
            Type::Concrete(_) => ty.clone(),
            Type::Abstract(_) if ty.is_any() => {
                if self.rng.gen_bool(0.6) || self.structs.is_empty() {
                    Type::int()
                } else {
                    self.structs[0].clone()
                }
            }
            Type::Abstract(a) => self.types.children_of(a)[0].clone(),
        };
        self.build(b, &concrete, depth)
    }

    fn build(&mut self, b: &mut BodyGen, ty: &Type, depth: usize) -> Reg {
        if ty.is_int() {
            let p = self.rng.gen_range(-1..=3);
            return b.push(Op::Const(p), Type::int());
        }
        let fields = self.types.fields(ty).expect("declared struct").to_vec();
        let args = fields.iter().map(|f| self.value_of(b, f, depth + 1)).collect();
        b.push(Op::New { ty: ty.clone(), args }, ty.clone())
    }

    fn any_reg(&mut self, b: &mut BodyGen) -> Reg {
        if b.view.is_empty() {
            return b.push(Op::Const(self.rng.gen_range(0..=2)), Type::int());
        }
        Reg(self.rng.gen_range(0..b.view.len()))
    }

    fn guard(&mut self, b: &mut BodyGen) -> Reg {
        let ints: Vec<Reg> = (0..b.view.len()).filter(|&i| b.view[i].is_int()).map(Reg).collect();
        if !ints.is_empty() && self.rng.gen_bool(0.8) {
            *ints.choose(&mut self.rng).unwrap()
        } else if self.rng.gen_bool(0.5) {
            let p = if self.rng.gen_bool(0.8) { 1 } else { 0 };
            b.push(Op::Const(p), Type::int())
        } else {
            self.any_reg(b)
        }
    }

    fn call(&mut self, b: &mut BodyGen, own: usize) {
        let callee = if own > 0 && self.rng.gen_bool(0.85) {
            self.rng.gen_range(0..own)
        } else {
            self.rng.gen_range(0..self.names.len())
        };
        let (name, arity, sigs) = self.names[callee].clone();
        let sig = sigs.choose(&mut self.rng).unwrap().clone();
        let args: Vec<Reg> = if self.rng.gen_bool(0.8) {
            sig.iter().map(|t| self.value_of(b, t, 0)).collect()
        } else {
            (0..arity).map(|_| self.any_reg(b)).collect()
        };
        let guard = if callee >= own && own < self.names.len() {
            // Calls that may recurse get a guard that is sometimes zero.
            let p = self.rng.gen_range(0..=1);
            b.push(Op::Const(p), Type::int())
        } else {
            self.guard(b)
        };
        let alt = self.any_reg(b);
        b.push(
            Op::Call {
                guard,
                callee: name.as_str().into(),
                args,
                alt,
            },
            Type::any(),
        );
    }

    fn instr(&mut self, b: &mut BodyGen, own: usize) {
        let call_w = 1 + self.cfg.max_call_depth_bias as u32;
        let pick = self.rng.gen_range(0..5 + call_w);
        match pick {
            0 => {
                let p = self.rng.gen_range(-2..=3);
                b.push(Op::Const(p), Type::int());
            }
            1 => {
                let r = self.any_reg(b);
                let t = b.view[r.0].clone();
                b.push(Op::Copy(r), t);
            }
            2 if !self.structs.is_empty() => {
                let ty = self.structs.choose(&mut self.rng).unwrap().clone();
                self.build(b, &ty, 0);
            }
            3 | 4 => {
                let recvs: Vec<(Reg, Vec<Type>)> = (0..b.view.len())
                    .filter_map(|i| {
                        let t = &b.view[i];
                        let fs = if t.is_concrete() { self.types.fields(t) } else { None }?;
                        (!fs.is_empty()).then(|| (Reg(i), fs.to_vec()))
                    })
                    .collect();
                match recvs.choose(&mut self.rng) {
                    Some((r, fs)) => {
                        let index = self.rng.gen_range(0..fs.len());
                        b.push(Op::Field { recv: *r, index }, fs[index].clone());
                    }
                    None => self.call(b, own),
                }
            }
            _ => self.call(b, own),
        }
    }

    fn body(&mut self, params: &[Type], own: usize) -> Vec<Instr> {
        let mut b = BodyGen {
            view: params.to_vec(),
            instrs: Vec::new(),
        };
        let len = self.rng.gen_range(1..=self.cfg.max_body_len.max(1));
        for _ in 0..len {
            self.instr(&mut b, own);
            if b.instrs.len() >= 3 * self.cfg.max_body_len.max(1) {
                break;
            }
        }
        b.instrs
    }

    fn program(mut self) -> (TypeTable, MethodTable) {
        self.types_gen();
        self.signatures();
        let mut table = MethodTable::new();
        for i in 0..self.names.len() {
            let (name, _, sigs) = self.names[i].clone();
            for sig in sigs {
                let body = self.body(&sig, i);
                table.add(Method::original(&name, sig, body)).expect("distinct signatures");
            }
        }
        let mut b = BodyGen {
            view: vec![],
            instrs: vec![],
        };
        let calls = self.rng.gen_range(1..=3);
        for _ in 0..calls {
            let len = b.instrs.len();
            self.call(&mut b, self.names.len());
            if self.rng.gen_bool(0.3) {
                self.instr(&mut b, self.names.len());
            }
            debug_assert!(b.instrs.len() > len);
        }
        table.add(Method::original(MAIN, vec![], b.instrs)).expect("main is unique");
        (self.types, table)
    }
}

/// Generates a well-formed program, deterministically in `cfg.seed`.
pub fn gen_program(cfg: &GenConfig) -> (TypeTable, MethodTable) {
    for attempt in 0u64.. {
        let g = Gen {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15))),
            cfg,
            types: TypeTable::new(),
            structs: vec![],
            abstracts: vec![],
            names: vec![],
        };
        let (tt, mt) = g.program();
        if validate(&tt, &mt).is_empty() {
            return (tt, mt);
        }
    }
    unreachable!()
}

/// A property of the JIT run that failed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyKind {
    MaxDevirt,
    TableOptimizes,
    GroundedDevirt,
    Soundness,
    CalleeStability,
    NeverWrong,
    WellFormed,
    StubFree,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PropertyFailure {
    pub property: PropertyKind,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OutcomeSummary {
    pub class: &'static str,
    pub steps: u64,
    pub detail: String,
}

impl From<&Outcome> for OutcomeSummary {
    fn from(o: &Outcome) -> Self {
        OutcomeSummary {
            class: o.class(),
            steps: o.steps(),
            detail: o.to_string(),
        }
    }
}

/// Result of comparing two runs.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffVerdict {
    pub matched: bool,
    /// Left run: the dispatch run (or the original table for AOT checks).
    pub dispatch: Outcome,
    /// Right run: the JIT run (or the compiled table for AOT checks).
    pub jit: Outcome,
    pub property_failures: Vec<PropertyFailure>,
    pub seed: Option<u64>,
    pub program: Option<String>,
    /// Final table of the JIT run.
    pub jit_table: MethodTable,
    /// Dynamically executed dispatched calls of both runs.
    pub calls_checked: usize,
}

impl DiffVerdict {
    pub fn step_counts(&self) -> (u64, u64) {
        (self.dispatch.steps(), self.jit.steps())
    }

    pub fn failures_of(&self, kind: PropertyKind) -> usize {
        self.property_failures.iter().filter(|f| f.property == kind).count()
    }

    pub fn with_program(mut self, seed: u64, types: &TypeTable, table: &MethodTable) -> Self {
        self.seed = Some(seed);
        self.program = Some(print_program(types, table));
        self
    }
}

impl Serialize for DiffVerdict {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.matched {
            let mut m = s.serialize_map(Some(2))?;
            m.serialize_entry("verdict", "match")?;
            m.serialize_entry("steps", &self.dispatch.steps())?;
            return m.end();
        }
        let mut m = s.serialize_map(None)?;
        m.serialize_entry("verdict", "mismatch")?;
        m.serialize_entry("dispatch", &OutcomeSummary::from(&self.dispatch))?;
        m.serialize_entry("jit", &OutcomeSummary::from(&self.jit))?;
        m.serialize_entry("step_counts", &self.step_counts())?;
        m.serialize_entry("property_failures", &self.property_failures)?;
        if let Some(seed) = self.seed {
            m.serialize_entry("seed", &seed)?;
        }
        if let Some(p) = &self.program {
            m.serialize_entry("program", p)?;
        }
        m.end()
    }
}

fn checked_run(types: &TypeTable, table: &MethodTable, entry: &Entry, fuel: u64, semantics: Semantics) -> RunResult {
    run(
        types,
        table,
        entry,
        &RunOptions {
            fuel,
            semantics,
            check_soundness: true,
            record_calls: true,
            trace: false,
        },
    )
}

fn fail(out: &mut Vec<PropertyFailure>, property: PropertyKind, detail: impl ToString) {
    out.push(PropertyFailure {
        property,
        detail: detail.to_string(),
    });
}

/// Checks that every call made from a grounded activation reaches a stable
/// callee.
fn callee_stability(inf: &mut Inferencer<'_>, runs: &[&RunResult], out: &mut Vec<PropertyFailure>) -> usize {
    let mut memo: HashMap<CallKey, Option<StabilityReport>> = HashMap::new();
    let mut classify = |inf: &mut Inferencer<'_>, k: &CallKey| {
        memo.entry(k.clone())
            .or_insert_with(|| classify_with(inf, &k.name, &k.args).ok())
            .clone()
    };
    let mut n = 0;
    for r in runs {
        for call in &r.dispatched {
            n += 1;
            let grounded = classify(inf, &call.caller).is_some_and(|c| c.grounded);
            if !grounded {
                continue;
            }
            match classify(inf, &call.callee) {
                Some(c) if c.stable => {}
                _ => fail(out, PropertyKind::CalleeStability, format!("{} -> {}", call.caller, call.callee)),
            }
        }
    }
    n
}

fn run_properties(types: &TypeTable, source: &MethodTable, runs: &[&RunResult], out: &mut Vec<PropertyFailure>) -> usize {
    for r in runs {
        for v in &r.soundness_violations {
            fail(out, PropertyKind::Soundness, v);
        }
        if let Outcome::Wrong { reason, .. } = &r.outcome {
            fail(out, PropertyKind::NeverWrong, reason);
        }
    }
    let origs = originals(source);
    let mut inf = Inferencer::new(types, &origs);
    callee_stability(&mut inf, runs, out)
}

fn table_properties(types: &TypeTable, source: &MethodTable, compiled: &MethodTable, out: &mut Vec<PropertyFailure>) {
    if let Err(w) = max_devirt_table(types, compiled) {
        fail(out, PropertyKind::MaxDevirt, w);
    }
    if let Err(w) = table_optimizes(types, &originals(source), compiled) {
        fail(out, PropertyKind::TableOptimizes, w);
    }
    let origs = originals(compiled);
    let mut inf = Inferencer::new(types, &origs);
    for m in compiled.instances() {
        match classify_with(&mut inf, &m.name, &m.params) {
            Ok(r) if r.grounded && !fully_devirtualized(m) => {
                fail(out, PropertyKind::GroundedDevirt, m)
            }
            Ok(_) => {}
            Err(e) => fail(out, PropertyKind::GroundedDevirt, format!("{m}: {e}")),
        }
    }
    for d in validate(types, compiled) {
        fail(out, PropertyKind::WellFormed, d);
    }
    if compiled.has_stubs() {
        fail(out, PropertyKind::StubFree, "stub in final table");
    }
}

/// Runs `entry` under dispatch and JIT semantics and checks that they agree
/// step for step, plus the properties of the compiled table.
pub fn diff_test(types: &TypeTable, table: &MethodTable, entry: &Entry, fuel: u64) -> DiffVerdict {
    let d = checked_run(types, table, entry, fuel, Semantics::Dispatch);
    let j = checked_run(types, table, entry, fuel, Semantics::Jit);
    let mut failures = Vec::new();
    let calls_checked = run_properties(types, table, &[&d, &j], &mut failures);
    table_properties(types, table, &j.table, &mut failures);
    DiffVerdict {
        matched: d.outcome == j.outcome && failures.is_empty(),
        dispatch: d.outcome,
        jit: j.outcome,
        property_failures: failures,
        seed: None,
        program: None,
        jit_table: j.table,
        calls_checked,
    }
}

/// Harvests a compiled table from a JIT run, then runs the original and the
/// compiled table under dispatch semantics and compares them.
pub fn aot_test(types: &TypeTable, table: &MethodTable, entry: &Entry, fuel: u64) -> DiffVerdict {
    let harvest = checked_run(types, table, entry, fuel, Semantics::Jit);
    let compiled = harvest.table;
    let a = checked_run(types, table, entry, fuel, Semantics::Dispatch);
    let b = checked_run(types, &compiled, entry, fuel, Semantics::Dispatch);
    let mut failures = Vec::new();
    let calls_checked = run_properties(types, table, &[&a, &b], &mut failures);
    table_properties(types, table, &compiled, &mut failures);
    DiffVerdict {
        matched: a.outcome == b.outcome && failures.is_empty(),
        dispatch: a.outcome,
        jit: b.outcome,
        property_failures: failures,
        seed: None,
        program: None,
        jit_table: compiled,
        calls_checked,
    }
}

/// Greedily removes methods, instructions and type declarations while the
/// program stays well-formed and `keep` still holds.
pub fn shrink(
    types: &TypeTable,
    table: &MethodTable,
    mut keep: impl FnMut(&TypeTable, &MethodTable) -> bool,
) -> (TypeTable, MethodTable) {
    let mut cur = (types.clone(), table.clone());
    let ok = |c: &(TypeTable, MethodTable), keep: &mut dyn FnMut(&TypeTable, &MethodTable) -> bool| {
        validate(&c.0, &c.1).is_empty() && keep(&c.0, &c.1)
    };
    loop {
        let mut progressed = false;

        let keys: Vec<(String, Vec<Type>)> = cur
            .1
            .iter()
            .filter(|m| &*m.name != MAIN || !m.params.is_empty())
            .map(|m| (m.name.to_string(), m.params.clone()))
            .collect();
        for (name, params) in keys {
            let mut cand = cur.clone();
            cand.1.remove(&name, &params);
            if ok(&cand, &mut keep) {
                cur = cand;
                progressed = true;
            }
        }

        let methods: Vec<Method> = cur.1.iter().map(|m| (**m).clone()).collect();
        for m in methods {
            let mut current = m;
            let mut i = 0;
            while i < current.instrs().len() {
                let Some(smaller) = remove_instr(&current, i) else {
                    i += 1;
                    continue;
                };
                let mut cand = cur.clone();
                cand.1.insert(smaller.clone());
                if ok(&cand, &mut keep) {
                    cur = cand;
                    current = smaller;
                    progressed = true;
                } else {
                    i += 1;
                }
            }
        }

        for idx in (0..cur.0.decls().len()).rev() {
            let mut tt = TypeTable::new();
            for (k, d) in cur.0.decls().iter().enumerate() {
                if k != idx {
                    tt.declare(d.clone()).expect("subset of a valid table");
                }
            }
            let cand = (tt, cur.1.clone());
            if ok(&cand, &mut keep) {
                cur = cand;
                progressed = true;
            }
        }

        if !progressed {
            return cur;
        }
    }
}

/// Drops instruction `i` if nothing later reads its register, renumbering
/// the registers above it.
fn remove_instr(m: &Method, i: usize) -> Option<Method> {
    let body = m.body.instrs()?;
    if body.len() <= 1 {
        return None;
    }
    let gone = body[i].target;
    if body[i + 1..].iter().any(|x| x.reads().contains(&gone)) {
        return None;
    }
    let shift = |r: Reg| if r.0 > gone.0 { Reg(r.0 - 1) } else { r };
    let shift_all = |rs: &[Reg]| rs.iter().map(|r| shift(*r)).collect::<Vec<_>>();
    let instrs = body
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != i)
        .map(|(_, x)| {
            let op = match &x.op {
                Op::Const(p) => Op::Const(*p),
                Op::Copy(r) => Op::Copy(shift(*r)),
                Op::New { ty, args } => Op::New {
                    ty: ty.clone(),
                    args: shift_all(args),
                },
                Op::Field { recv, index } => Op::Field {
                    recv: shift(*recv),
                    index: *index,
                },
                Op::Call {
                    guard,
                    callee,
                    args,
                    alt,
                } => Op::Call {
                    guard: shift(*guard),
                    callee: callee.clone(),
                    args: shift_all(args),
                    alt: shift(*alt),
                },
                Op::Invoke {
                    guard,
                    callee,
                    sig,
                    args,
                    alt,
                } => Op::Invoke {
                    guard: shift(*guard),
                    callee: callee.clone(),
                    sig: sig.clone(),
                    args: shift_all(args),
                    alt: shift(*alt),
                },
            };
            Instr {
                target: shift(x.target),
                op,
            }
        })
        .collect();
    Some(Method {
        body: Body::code(instrs),
        ..m.clone()
    })
}
