//! Small-step operational semantics over configurations of a frame stack
//! and a method table, parameterized by a JIT strategy.
//!
//! With the identity strategy this is plain dynamic dispatch; with the
//! specializing compiler every dispatched call first extends the table with
//! an instance for the runtime argument types.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::infer::{CallKey, Inferencer, RegisterTyping};
use crate::ir::{originals, Ident, Instr, MethodTable, Op, Reg, SigDisplay, Type, TypeTable, MAIN};
use crate::typesys::{dispatch, is_subtype, DispatchError};

#[derive(Clone)]
pub enum Value {
    Int(i64),
    Struct(Arc<StructValue>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructValue {
    pub ty: Ident,
    pub fields: Vec<Value>,
}

/// Nesting depth past which struct fields print as `..`.
pub const DISPLAY_DEPTH: usize = 12;

impl Value {
    pub fn new_struct(ty: &str, fields: Vec<Value>) -> Value {
        Value::Struct(Arc::new(StructValue {
            ty: ty.into(),
            fields,
        }))
    }

    fn fmt_depth(&self, f: &mut fmt::Formatter<'_>, depth: usize) -> fmt::Result {
        match self {
            Value::Int(p) => write!(f, "{p}"),
            Value::Struct(s) if depth >= DISPLAY_DEPTH && !s.fields.is_empty() => write!(f, "{}(..)", s.ty),
            Value::Struct(s) => {
                write!(f, "{}(", s.ty)?;
                for (i, v) in s.fields.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    v.fmt_depth(f, depth + 1)?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Structs share fields, so a value is a DAG whose tree unfolding can be
/// exponentially large. Pairs of nodes already proven equal are not revisited.
fn values_eq(a: &Value, b: &Value, proven: &mut HashSet<(*const StructValue, *const StructValue)>) -> bool {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x == y,
        (Value::Struct(x), Value::Struct(y)) => {
            let key = (Arc::as_ptr(x), Arc::as_ptr(y));
            if Arc::ptr_eq(x, y) || proven.contains(&key) {
                return true;
            }
            let eq = x.ty == y.ty
                && x.fields.len() == y.fields.len()
                && x.fields.iter().zip(&y.fields).all(|(u, v)| values_eq(u, v, proven));
            if eq {
                proven.insert(key);
            }
            eq
        }
        _ => false,
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Value) -> bool {
        values_eq(self, other, &mut HashSet::new())
    }
}

impl Eq for Value {}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_depth(f, 0)
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_depth(f, 0)
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Int(p) => s.serialize_i64(*p),
            Value::Struct(_) => s.collect_str(self),
        }
    }
}

/// The runtime type of a value: its outermost constructor.
pub fn typeof_value(v: &Value) -> Type {
    match v {
        Value::Int(_) => Type::int(),
        Value::Struct(s) => Type::Concrete(s.ty.clone()),
    }
}

pub fn typeof_values(vs: &[Value]) -> Vec<Type> {
    vs.iter().map(typeof_value).collect()
}

/// One register file.
pub type Environment = Vec<Value>;

#[derive(Clone, Debug)]
pub struct Frame {
    pub env: Environment,
    pub body: Arc<[Instr]>,
    /// Index of the next instruction; a pending call stays current until
    /// its callee returns.
    pub pc: usize,
    /// Method name and runtime argument types of this activation.
    pub activation: CallKey,
    typing: Option<Arc<RegisterTyping>>,
}

impl Frame {
    pub fn rest(&self) -> &[Instr] {
        &self.body[self.pc..]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Rule {
    Prim,
    Reg,
    New,
    Field,
    False1,
    False2,
    Disp,
    Direct,
    Ret,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// What a single step did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepEvent {
    pub rule: Rule,
    /// Stack depth when the rule fired.
    pub depth: usize,
    pub assigned: Option<(Reg, Value)>,
    /// Callee activation for `Disp` and `Direct`.
    pub call: Option<CallKey>,
}

/// The call site of an erred configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrSite {
    pub callee: Ident,
    pub args: Vec<Type>,
    pub reason: DispatchError,
}

impl fmt::Display for ErrSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}): {}", self.callee, SigDisplay(&self.args), self.reason)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum WrongReason {
    EmptyStack,
    UndefinedRegister(usize),
    FieldOnNonStruct,
    FieldOutOfBounds,
    MissingDirectTarget(String),
    StubTarget(String),
    UnknownCallee(String),
    EmptyReturn,
}

impl fmt::Display for WrongReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WrongReason::EmptyStack => f.write_str("empty stack"),
            WrongReason::UndefinedRegister(r) => write!(f, "undefined register %{r}"),
            WrongReason::FieldOnNonStruct => f.write_str("field on non-struct"),
            WrongReason::FieldOutOfBounds => f.write_str("field index out of bounds"),
            WrongReason::MissingDirectTarget(m) => write!(f, "direct call target {m} absent"),
            WrongReason::StubTarget(m) => write!(f, "call target {m} is a stub"),
            WrongReason::UnknownCallee(m) => write!(f, "unknown callee {m}"),
            WrongReason::EmptyReturn => f.write_str("return from a frame with an empty environment"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepResult {
    Stepped(StepEvent),
    /// The last frame returned; carries its environment.
    Finished(StepEvent, Environment),
    Erred(ErrSite),
    Wrong(WrongReason),
}

/// Compilation hook invoked by the `Disp` rule before dispatching.
pub trait JitStrategy {
    fn compile(
        &mut self,
        inferencer: &mut Inferencer<'_>,
        table: &mut MethodTable,
        name: &str,
        args: &[Type],
    );
}

/// The identity strategy: plain dynamic dispatch.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoJit;

impl JitStrategy for NoJit {
    fn compile(&mut self, _: &mut Inferencer<'_>, _: &mut MethodTable, _: &str, _: &[Type]) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantics {
    #[default]
    Dispatch,
    Jit,
}

/// A register whose runtime type escaped its inferred type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SoundnessViolation {
    pub activation: CallKey,
    pub reg: Reg,
    pub runtime: Type,
    pub inferred: Option<Type>,
}

impl fmt::Display for SoundnessViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.inferred {
            Some(t) => write!(
                f,
                "{}: {} has runtime type {} not below inferred {}",
                self.activation, self.reg, self.runtime, t
            ),
            None => write!(f, "{}: no inferred type for {}", self.activation, self.reg),
        }
    }
}

/// A dynamically executed dispatched call.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DispatchRecord {
    pub caller: CallKey,
    pub callee: CallKey,
}

#[derive(Clone, Debug)]
pub struct Configuration {
    pub stack: Vec<Frame>,
    pub table: MethodTable,
    pub steps: u64,
}

impl Configuration {
    /// Starts with a single frame running the method `name` dispatches to
    /// at the types of `args`.
    pub fn start(
        types: &TypeTable,
        table: MethodTable,
        name: &str,
        args: Vec<Value>,
    ) -> Result<Configuration, StepResult> {
        let arg_types = typeof_values(&args);
        if !table.has_name(name) {
            return Err(StepResult::Wrong(WrongReason::UnknownCallee(name.to_string())));
        }
        let method = match dispatch(types, &table, name, &arg_types) {
            Ok(m) => m.clone(),
            Err(reason) => {
                return Err(StepResult::Erred(ErrSite {
                    callee: name.into(),
                    args: arg_types,
                    reason,
                }))
            }
        };
        let Some(body) = method.body.instrs() else {
            return Err(StepResult::Wrong(WrongReason::StubTarget(method.to_string())));
        };
        let frame = Frame {
            env: args,
            body: body.into(),
            pc: 0,
            activation: CallKey {
                name: name.into(),
                args: arg_types,
            },
            typing: None,
        };
        Ok(Configuration {
            stack: vec![frame],
            table,
            steps: 0,
        })
    }

    /// Performs one step. On `Erred` and `Wrong` the configuration is left
    /// unchanged.
    pub fn step(
        &mut self,
        inferencer: &mut Inferencer<'_>,
        strategy: &mut dyn JitStrategy,
    ) -> StepResult {
        let types = inferencer.types();
        let depth = self.stack.len();
        let Some(top) = self.stack.last_mut() else {
            return StepResult::Wrong(WrongReason::EmptyStack);
        };

        if top.pc == top.body.len() {
            let Some(ret) = top.env.last().cloned() else {
                return StepResult::Wrong(WrongReason::EmptyReturn);
            };
            let frame = self.stack.pop().expect("non-empty stack");
            self.steps += 1;
            let mut ev = StepEvent {
                rule: Rule::Ret,
                depth,
                assigned: None,
                call: None,
            };
            return match self.stack.last_mut() {
                None => StepResult::Finished(ev, frame.env),
                Some(caller) => {
                    caller.env.push(ret.clone());
                    caller.pc += 1;
                    ev.assigned = Some((Reg(caller.env.len() - 1), ret));
                    StepResult::Stepped(ev)
                }
            };
        }

        let instr = top.body[top.pc].clone();
        let env = &top.env;
        let read = |r: Reg| env.get(r.0).ok_or(WrongReason::UndefinedRegister(r.0));

        let assign = |rule: Rule, v: Value| (rule, v);
        let simple = match &instr.op {
            Op::Const(p) => Ok(Some(assign(Rule::Prim, Value::Int(*p)))),
            Op::Copy(r) => read(*r).map(|v| Some(assign(Rule::Reg, v.clone()))),
            Op::New { ty, args } => args
                .iter()
                .map(|r| read(*r).cloned())
                .collect::<Result<Vec<_>, _>>()
                .map(|vs| Some(assign(Rule::New, Value::new_struct(ty.name(), vs)))),
            Op::Field { recv, index } => match read(*recv) {
                Err(e) => Err(e),
                Ok(Value::Int(_)) => Err(WrongReason::FieldOnNonStruct),
                Ok(Value::Struct(s)) => s
                    .fields
                    .get(*index)
                    .cloned()
                    .map(|v| Some(assign(Rule::Field, v)))
                    .ok_or(WrongReason::FieldOutOfBounds),
            },
            Op::Call { guard, alt, .. } | Op::Invoke { guard, alt, .. } => {
                match (read(*guard), read(*alt)) {
                    (Err(e), _) | (_, Err(e)) => Err(e),
                    (Ok(Value::Int(0)), Ok(a)) => {
                        let rule = if instr.is_dispatch() {
                            Rule::False1
                        } else {
                            Rule::False2
                        };
                        Ok(Some(assign(rule, a.clone())))
                    }
                    _ => Ok(None),
                }
            }
        };
        match simple {
            Err(w) => return StepResult::Wrong(w),
            Ok(Some((rule, v))) => {
                top.env.push(v.clone());
                top.pc += 1;
                self.steps += 1;
                return StepResult::Stepped(StepEvent {
                    rule,
                    depth,
                    assigned: Some((Reg(top.env.len() - 1), v)),
                    call: None,
                });
            }
            Ok(None) => {}
        }

        // A call whose guard is non-zero.
        let (callee, arg_regs) = match &instr.op {
            Op::Call { callee, args, .. } | Op::Invoke { callee, args, .. } => (callee, args),
            _ => unreachable!("only calls fall through"),
        };
        let args = match arg_regs.iter().map(|r| read(*r).cloned()).collect::<Result<Vec<_>, _>>() {
            Ok(a) => a,
            Err(w) => return StepResult::Wrong(w),
        };
        let arg_types = typeof_values(&args);

        let (method, rule) = match &instr.op {
            Op::Call { .. } => {
                if !self.table.has_name(callee) {
                    return StepResult::Wrong(WrongReason::UnknownCallee(callee.to_string()));
                }
                if let Err(reason) = dispatch(types, &self.table, callee, &arg_types) {
                    return StepResult::Erred(ErrSite {
                        callee: callee.clone(),
                        args: arg_types,
                        reason,
                    });
                }
                strategy.compile(inferencer, &mut self.table, callee, &arg_types);
                match dispatch(types, &self.table, callee, &arg_types) {
                    Ok(m) => (m.clone(), Rule::Disp),
                    Err(reason) => {
                        return StepResult::Erred(ErrSite {
                            callee: callee.clone(),
                            args: arg_types,
                            reason,
                        })
                    }
                }
            }
            Op::Invoke { sig, .. } => match self.table.lookup_exact(callee, sig) {
                Some(m) => (m.clone(), Rule::Direct),
                None => {
                    return StepResult::Wrong(WrongReason::MissingDirectTarget(format!(
                        "{callee}[{}]",
                        SigDisplay(sig)
                    )))
                }
            },
            _ => unreachable!(),
        };
        let Some(body) = method.body.instrs() else {
            return StepResult::Wrong(WrongReason::StubTarget(method.to_string()));
        };
        let activation = CallKey {
            name: callee.clone(),
            args: arg_types,
        };
        self.stack.push(Frame {
            env: args,
            body: body.into(),
            pc: 0,
            activation: activation.clone(),
            typing: None,
        });
        self.steps += 1;
        StepResult::Stepped(StepEvent {
            rule,
            depth,
            assigned: None,
            call: Some(activation),
        })
    }
}

/// Entry point: a method name and concrete argument values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub name: Ident,
    pub args: Vec<Value>,
}

impl Entry {
    pub fn main() -> Entry {
        Entry {
            name: MAIN.into(),
            args: vec![],
        }
    }
}

impl Default for Entry {
    fn default() -> Self {
        Entry::main()
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub fuel: u64,
    pub semantics: Semantics,
    pub check_soundness: bool,
    pub record_calls: bool,
    pub trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            fuel: 100_000,
            semantics: Semantics::Dispatch,
            check_soundness: false,
            record_calls: false,
            trace: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Finished { env: Environment, steps: u64 },
    Erred { site: ErrSite, steps: u64 },
    Wrong { reason: WrongReason, steps: u64 },
    FuelExhausted { steps: u64 },
}

impl Outcome {
    pub fn steps(&self) -> u64 {
        match self {
            Outcome::Finished { steps, .. }
            | Outcome::Erred { steps, .. }
            | Outcome::Wrong { steps, .. }
            | Outcome::FuelExhausted { steps } => *steps,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            Outcome::Finished { .. } => "finished",
            Outcome::Erred { .. } => "erred",
            Outcome::Wrong { .. } => "wrong",
            Outcome::FuelExhausted { .. } => "fuel_exhausted",
        }
    }

    pub fn final_value(&self) -> Option<&Value> {
        match self {
            Outcome::Finished { env, .. } => env.last(),
            _ => None,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Finished { env, steps } => {
                write!(f, "finished after {steps} steps: [")?;
                for (i, v) in env.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
            Outcome::Erred { site, steps } => write!(f, "erred after {steps} steps at {site}"),
            Outcome::Wrong { reason, steps } => write!(f, "wrong after {steps} steps: {reason}"),
            Outcome::FuelExhausted { steps } => write!(f, "fuel exhausted after {steps} steps"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub outcome: Outcome,
    /// The method table at the end of the run.
    pub table: MethodTable,
    pub soundness_violations: Vec<SoundnessViolation>,
    pub dispatched: Vec<DispatchRecord>,
    pub trace: Vec<(u64, StepEvent)>,
}

/// Runs `entry` for at most `opts.fuel` steps. Compilation inside a `Disp`
/// step is free.
pub fn run(types: &TypeTable, table: &MethodTable, entry: &Entry, opts: &RunOptions) -> RunResult {
    let origs = originals(table);
    let mut inferencer = Inferencer::new(types, &origs);
    let mut jit = crate::jit::Jit;
    let mut nojit = NoJit;
    let strategy: &mut dyn JitStrategy = match opts.semantics {
        Semantics::Dispatch => &mut nojit,
        Semantics::Jit => &mut jit,
    };
    run_with(types, table, entry, opts, &mut inferencer, strategy)
}

pub fn run_with(
    types: &TypeTable,
    table: &MethodTable,
    entry: &Entry,
    opts: &RunOptions,
    inferencer: &mut Inferencer<'_>,
    strategy: &mut dyn JitStrategy,
) -> RunResult {
    let mut result = RunResult {
        outcome: Outcome::FuelExhausted { steps: 0 },
        table: table.clone(),
        soundness_violations: vec![],
        dispatched: vec![],
        trace: vec![],
    };
    let mut cfg = match Configuration::start(types, table.clone(), &entry.name, entry.args.clone()) {
        Ok(c) => c,
        Err(StepResult::Erred(site)) => {
            result.outcome = Outcome::Erred { site, steps: 0 };
            return result;
        }
        Err(StepResult::Wrong(reason)) => {
            result.outcome = Outcome::Wrong { reason, steps: 0 };
            return result;
        }
        Err(_) => unreachable!("start only errs or goes wrong"),
    };
    if opts.check_soundness {
        let frame = cfg.stack.last_mut().unwrap();
        check_frame_entry(inferencer, frame, &mut result.soundness_violations);
    }

    result.outcome = loop {
        if cfg.steps >= opts.fuel {
            break Outcome::FuelExhausted { steps: cfg.steps };
        }
        let caller = opts
            .record_calls
            .then(|| cfg.stack.last().map(|f| f.activation.clone()))
            .flatten();
        match cfg.step(inferencer, strategy) {
            StepResult::Stepped(ev) => {
                if opts.record_calls && ev.rule == Rule::Disp {
                    if let (Some(caller), Some(callee)) = (caller, ev.call.clone()) {
                        result.dispatched.push(DispatchRecord { caller, callee });
                    }
                }
                if opts.check_soundness {
                    let frame = cfg.stack.last_mut().unwrap();
                    if ev.call.is_some() {
                        check_frame_entry(inferencer, frame, &mut result.soundness_violations);
                    } else if let Some((reg, v)) = &ev.assigned {
                        check_register(inferencer, frame, *reg, v, &mut result.soundness_violations);
                    }
                }
                if opts.trace {
                    result.trace.push((cfg.steps, ev));
                }
            }
            StepResult::Finished(ev, env) => {
                if opts.trace {
                    result.trace.push((cfg.steps, ev));
                }
                break Outcome::Finished {
                    env,
                    steps: cfg.steps,
                };
            }
            StepResult::Erred(site) => break Outcome::Erred {
                site,
                steps: cfg.steps,
            },
            StepResult::Wrong(reason) => break Outcome::Wrong {
                reason,
                steps: cfg.steps,
            },
        }
    };
    result.table = cfg.table;
    result
}

fn check_frame_entry(inf: &mut Inferencer<'_>, frame: &mut Frame, out: &mut Vec<SoundnessViolation>) {
    match inf.infer_method(&frame.activation.name, &frame.activation.args) {
        Ok(t) => frame.typing = Some(t),
        Err(_) => {
            out.push(SoundnessViolation {
                activation: frame.activation.clone(),
                reg: Reg(0),
                runtime: Type::any(),
                inferred: None,
            });
            return;
        }
    }
    for i in 0..frame.env.len() {
        let v = frame.env[i].clone();
        check_register(inf, frame, Reg(i), &v, out);
    }
}

fn check_register(
    inf: &Inferencer<'_>,
    frame: &Frame,
    reg: Reg,
    v: &Value,
    out: &mut Vec<SoundnessViolation>,
) {
    let Some(typing) = &frame.typing else { return };
    let runtime = typeof_value(v);
    let inferred = typing.get(reg).cloned();
    let ok = inferred
        .as_ref()
        .is_some_and(|t| is_subtype(inf.types(), &runtime, t));
    if !ok {
        out.push(SoundnessViolation {
            activation: frame.activation.clone(),
            reg,
            runtime,
            inferred,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textio::{parse_program, ParseMode};

    const PT: &str = include_str!("../tests/fixtures/pt.jules");

    fn doubling(depth: usize, leaf: i64) -> Value {
        let mut v = Value::Int(leaf);
        for _ in 0..depth {
            v = Value::new_struct("P", vec![v.clone(), v]);
        }
        v
    }

    #[test]
    fn shared_values_compare_and_print_in_linear_time() {
        let (a, b) = (doubling(200, 1), doubling(200, 1));
        assert_eq!(a, b);
        assert_ne!(a, doubling(200, 2));
        assert_ne!(a, doubling(199, 1));
        let shown = a.to_string();
        assert!(shown.starts_with("P(P(") && shown.contains("P(..)"));
        assert_eq!(Value::new_struct("Unit", vec![]).to_string(), "Unit()");
    }

    fn pt() -> (TypeTable, MethodTable) {
        parse_program(PT, ParseMode::Source).unwrap()
    }

    fn main_frame_at(types: &TypeTable, table: &MethodTable, pc: usize, env: Vec<Value>) -> Configuration {
        let mut cfg = Configuration::start(types, table.clone(), "main", vec![]).unwrap();
        cfg.stack[0].pc = pc;
        cfg.stack[0].env = env;
        cfg
    }

    #[test]
    fn disp_pushes_callee_frame() {
        let (tt, mt) = pt();
        let origs = originals(&mt);
        let mut inf = Inferencer::new(&tt, &origs);
        let p = Value::new_struct("Pt", vec![Value::Int(1), Value::Int(2)]);
        let env = vec![Value::Int(1), Value::Int(2), p.clone(), Value::Int(1)];
        let mut cfg = main_frame_at(&tt, &mt, 4, env);
        let r = cfg.step(&mut inf, &mut NoJit);
        let StepResult::Stepped(ev) = r else { panic!("{r:?}") };
        assert_eq!(ev.rule, Rule::Disp);
        assert_eq!(cfg.stack.len(), 2);
        let top = cfg.stack.last().unwrap();
        assert_eq!(top.env, vec![p]);
        let f = mt.lookup_exact("f", &[Type::abstract_("APt")]).unwrap();
        assert_eq!(&*top.body, f.instrs());
        assert_eq!(cfg.table, mt);
    }

    #[test]
    fn false_guard_takes_alternative() {
        let (tt, mt) = pt();
        let origs = originals(&mt);
        let mut inf = Inferencer::new(&tt, &origs);
        let p = Value::new_struct("Pt", vec![Value::Int(1), Value::Int(2)]);
        let env = vec![Value::Int(1), Value::Int(2), p, Value::Int(0)];
        let mut cfg = main_frame_at(&tt, &mt, 4, env);
        let StepResult::Stepped(ev) = cfg.step(&mut inf, &mut NoJit) else { panic!() };
        assert_eq!(ev.rule, Rule::False1);
        assert_eq!(cfg.stack.len(), 1);
        assert_eq!(cfg.stack[0].env[4], Value::Int(0));
        assert_eq!(ev.assigned, Some((Reg(4), Value::Int(0))));
    }

    #[test]
    fn field_on_int_is_wrong() {
        let (tt, mt) = pt();
        let origs = originals(&mt);
        let mut inf = Inferencer::new(&tt, &origs);
        let mut cfg = Configuration::start(&tt, mt.clone(), "x", vec![Value::new_struct("Pt", vec![])]).unwrap();
        cfg.stack[0].env = vec![Value::Int(7)];
        assert_eq!(
            cfg.step(&mut inf, &mut NoJit),
            StepResult::Wrong(WrongReason::FieldOnNonStruct)
        );
        assert_eq!(WrongReason::FieldOnNonStruct.to_string(), "field on non-struct");
    }

    #[test]
    fn typeof_examples() {
        assert_eq!(typeof_value(&Value::Int(0)), Type::int());
        let p = Value::new_struct("Pt", vec![Value::Int(1), Value::Int(2)]);
        assert_eq!(typeof_value(&p), Type::concrete("Pt"));
        let nested = Value::new_struct("Box", vec![p]);
        assert_eq!(typeof_value(&nested), Type::concrete("Box"));
    }

    #[test]
    fn pt_runs_to_one_under_both_semantics() {
        let (tt, mt) = pt();
        let mut opts = RunOptions {
            fuel: 1000,
            check_soundness: true,
            ..Default::default()
        };
        let d = run(&tt, &mt, &Entry::main(), &opts);
        let Outcome::Finished { env, steps } = &d.outcome else { panic!("{:?}", d.outcome) };
        assert_eq!(env.last(), Some(&Value::Int(1)));
        assert_eq!(*steps, 11);
        assert_eq!(d.table, mt);
        assert!(d.soundness_violations.is_empty());

        opts.semantics = Semantics::Jit;
        let j = run(&tt, &mt, &Entry::main(), &opts);
        assert_eq!(j.outcome, d.outcome);
        assert!(j.table.contains("f", &[Type::concrete("Pt")]));
        assert!(j.soundness_violations.is_empty());
    }

    #[test]
    fn zero_fuel() {
        let (tt, mt) = pt();
        let opts = RunOptions {
            fuel: 0,
            ..Default::default()
        };
        assert_eq!(
            run(&tt, &mt, &Entry::main(), &opts).outcome,
            Outcome::FuelExhausted { steps: 0 }
        );
    }

    #[test]
    fn struct_guard_is_truthy() {
        let src = "type B() <: S
            method g(Int) { %1 = const 5 }
            method main() { %0 = new B() %1 = const 3 %2 = if %0 call g(%1) else %1 }";
        let (tt, mt) = parse_program(src, ParseMode::Source).unwrap();
        let r = run(&tt, &mt, &Entry::main(), &RunOptions::default());
        assert_eq!(r.outcome.final_value(), Some(&Value::Int(5)));
    }

    #[test]
    fn ambiguous_dispatch_errs() {
        let src = "method g(Int, Any) { %2 = const 1 }
            method g(Any, Int) { %2 = const 2 }
            method main() { %0 = const 1 %1 = if %0 call g(%0, %0) else %0 }";
        let (tt, mt) = parse_program(src, ParseMode::Source).unwrap();
        let r = run(&tt, &mt, &Entry::main(), &RunOptions::default());
        let Outcome::Erred { site, steps } = r.outcome else { panic!() };
        assert_eq!(steps, 1);
        assert!(matches!(site.reason, DispatchError::Ambiguous { .. }));
    }

    #[test]
    fn trace_does_not_change_outcome() {
        let (tt, mt) = pt();
        let plain = run(&tt, &mt, &Entry::main(), &RunOptions::default());
        let traced = run(
            &tt,
            &mt,
            &Entry::main(),
            &RunOptions {
                trace: true,
                ..Default::default()
            },
        );
        assert_eq!(plain.outcome, traced.outcome);
        assert_eq!(traced.trace.len(), 11);
        assert_eq!(traced.trace.last().unwrap().1.rule, Rule::Ret);
    }
}
