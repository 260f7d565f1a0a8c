//! The specializing, devirtualizing compiler.
//!
//! Compiling `m` at concrete argument types adds an instance keyed by those
//! types whose body is the original body with every resolvable dispatched
//! call rewritten into a direct call. Targets of new direct calls are
//! compiled too; a stub entry is inserted for each pending instance so that
//! recursive call chains terminate.

use std::collections::HashSet;

use crate::infer::{CallKey, Inferencer, RegisterTyping};
use crate::interp::JitStrategy;
use crate::ir::{originals, Body, Instr, Method, MethodTable, Op, Type, TypeTable};
use crate::typesys::dispatch;

/// The compiling strategy for the `Disp` rule.
#[derive(Clone, Copy, Debug, Default)]
pub struct Jit;

impl JitStrategy for Jit {
    fn compile(
        &mut self,
        inferencer: &mut Inferencer<'_>,
        table: &mut MethodTable,
        name: &str,
        args: &[Type],
    ) {
        compile_into(inferencer, table, name, args);
    }
}

/// Returns `table` extended with an instance of `name` at `args`, plus any
/// instances its direct calls need. Unchanged if the key already exists.
pub fn jit_compile(types: &TypeTable, table: &MethodTable, name: &str, args: &[Type]) -> MethodTable {
    let origs = originals(table);
    let mut inf = Inferencer::new(types, &origs);
    let mut out = table.clone();
    compile_into(&mut inf, &mut out, name, args);
    out
}

/// In-place compilation. `inferencer` must range over the originals of
/// `table`.
///
/// # Panics
///
/// If inference of a well-formed original fails or a stub survives, which
/// only happens on ill-formed tables.
pub fn compile_into(inf: &mut Inferencer<'_>, table: &mut MethodTable, name: &str, args: &[Type]) {
    if table.contains(name, args) || !args.iter().all(Type::is_concrete) {
        return;
    }
    if dispatch(inf.types(), inf.originals(), name, args).is_err() {
        return;
    }
    let mut work = Vec::new();
    let mut added = HashSet::new();
    enqueue(inf, table, name, args, &mut work, &mut added);
    while let Some(key) = work.pop() {
        let origin = dispatch(inf.types(), inf.originals(), &key.name, &key.args)
            .expect("queued keys have a dispatch target")
            .clone();
        let typing = inf
            .infer_method(&key.name, &key.args)
            .unwrap_or_else(|e| panic!("inference of {key} failed during compilation: {e}"));
        let body: Vec<Instr> = origin
            .instrs()
            .iter()
            .map(|i| translate(inf, &typing, i, table, &mut work, &mut added))
            .collect();
        table.insert(Method {
            name: key.name,
            params: key.args,
            body: Body::code(body),
            origin: origin.params.clone(),
        });
    }
    assert!(!table.has_stubs(), "stub left behind by compilation");
}

/// Inserts a stub for a new key and queues it for compilation.
fn enqueue(
    inf: &Inferencer<'_>,
    table: &mut MethodTable,
    name: &str,
    args: &[Type],
    work: &mut Vec<CallKey>,
    added: &mut HashSet<CallKey>,
) {
    let origin = dispatch(inf.types(), inf.originals(), name, args)
        .expect("enqueued call has a dispatch target");
    let key = CallKey {
        name: name.into(),
        args: args.to_vec(),
    };
    assert!(added.insert(key.clone()), "compilation revisited {key}");
    table.insert(Method {
        name: key.name.clone(),
        params: key.args.clone(),
        body: Body::Stub,
        origin: origin.params.clone(),
    });
    work.push(key);
}

/// Concrete argument types of a dispatched call with a defined target.
fn resolvable(inf: &Inferencer<'_>, typing: &RegisterTyping, instr: &Instr) -> Option<Vec<Type>> {
    let Op::Call { callee, args, .. } = &instr.op else {
        return None;
    };
    let tys: Vec<Type> = args
        .iter()
        .map(|r| typing.get(*r).cloned())
        .collect::<Option<_>>()?;
    if !tys.iter().all(Type::is_concrete) {
        return None;
    }
    dispatch(inf.types(), inf.originals(), callee, &tys).ok()?;
    Some(tys)
}

fn translate(
    inf: &Inferencer<'_>,
    typing: &RegisterTyping,
    instr: &Instr,
    table: &mut MethodTable,
    work: &mut Vec<CallKey>,
    added: &mut HashSet<CallKey>,
) -> Instr {
    let Some(sig) = resolvable(inf, typing, instr) else {
        return instr.clone();
    };
    let Op::Call {
        guard,
        callee,
        args,
        alt,
    } = &instr.op
    else {
        unreachable!()
    };
    if !table.contains(callee, &sig) {
        enqueue(inf, table, callee, &sig, work, added);
    }
    Instr {
        target: instr.target,
        op: Op::Invoke {
            guard: *guard,
            callee: callee.clone(),
            sig,
            args: args.clone(),
            alt: *alt,
        },
    }
}

/// Translates one instruction of a body typed by `typing`, compiling the
/// direct-call target into the returned table when it is missing.
pub fn translate_instr(
    types: &TypeTable,
    typing: &RegisterTyping,
    instr: &Instr,
    table: &MethodTable,
) -> (Instr, MethodTable) {
    let origs = originals(table);
    let mut inf = Inferencer::new(types, &origs);
    let Some(sig) = resolvable(&inf, typing, instr) else {
        return (instr.clone(), table.clone());
    };
    let Op::Call {
        guard,
        callee,
        args,
        alt,
    } = &instr.op
    else {
        unreachable!()
    };
    let mut out = table.clone();
    compile_into(&mut inf, &mut out, callee, &sig);
    let invoke = Instr {
        target: instr.target,
        op: Op::Invoke {
            guard: *guard,
            callee: callee.clone(),
            sig,
            args: args.clone(),
            alt: *alt,
        },
    };
    (invoke, out)
}
