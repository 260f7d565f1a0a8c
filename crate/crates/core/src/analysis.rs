//! Stability and groundedness classification, devirtualization checks, the
//! optimization relation between an original table and a compiled one, and
//! an instance census.

use std::fmt;

use serde::Serialize;

use crate::infer::{InferError, Inferencer, RegisterTyping};
use crate::ir::{originals, Ident, Instr, Method, MethodTable, Op, SigDisplay, Type, TypeTable};
use crate::typesys::dispatch;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StabilityReport {
    pub method: Ident,
    pub sig: Vec<Type>,
    pub stable: bool,
    pub grounded: bool,
    pub return_type: Type,
    pub register_types: RegisterTyping,
    pub per_register_concrete: Vec<bool>,
}

impl StabilityReport {
    fn from_typing(name: &str, sig: &[Type], typing: &RegisterTyping) -> Self {
        let per_register_concrete: Vec<bool> = typing.0.iter().map(Type::is_concrete).collect();
        let return_type = typing.return_type().cloned().unwrap_or_else(Type::any);
        StabilityReport {
            method: name.into(),
            sig: sig.to_vec(),
            stable: return_type.is_concrete(),
            grounded: per_register_concrete.iter().all(|&c| c),
            return_type,
            register_types: typing.clone(),
            per_register_concrete,
        }
    }
}

/// Classifies `name` at `args` by inferring the original it resolves to
/// over the originals of `table`. `args` may also be the exact declared
/// signature of an original with abstract parameters.
pub fn classify(
    types: &TypeTable,
    table: &MethodTable,
    name: &str,
    args: &[Type],
) -> Result<StabilityReport, InferError> {
    let origs = originals(table);
    let mut inf = Inferencer::new(types, &origs);
    classify_with(&mut inf, name, args)
}

/// As [`classify`], reusing an inferencer over the originals.
pub fn classify_with(
    inf: &mut Inferencer<'_>,
    name: &str,
    args: &[Type],
) -> Result<StabilityReport, InferError> {
    let typing = inf.infer_method(name, args)?;
    Ok(StabilityReport::from_typing(name, args, &typing))
}

/// Where a table-level check failed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub method: String,
    pub index: Option<usize>,
    pub reason: String,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{} instruction {}: {}", self.method, i, self.reason),
            None => write!(f, "{}: {}", self.method, self.reason),
        }
    }
}

fn arg_types(typing: &RegisterTyping, args: &[crate::ir::Reg]) -> Option<Vec<Type>> {
    args.iter().map(|r| typing.get(*r).cloned()).collect()
}

/// True unless `instr` is a dispatched call that the typing could resolve
/// to a target, or a direct call that does not match the typing or the
/// table.
pub fn max_devirt_instr(
    types: &TypeTable,
    typing: &RegisterTyping,
    table: &MethodTable,
    instr: &Instr,
) -> bool {
    match &instr.op {
        Op::Call { callee, args, .. } => match arg_types(typing, args) {
            None => false,
            Some(tys) => {
                !tys.iter().all(Type::is_concrete) || dispatch(types, table, callee, &tys).is_err()
            }
        },
        Op::Invoke {
            callee, sig, args, ..
        } => {
            arg_types(typing, args).as_deref() == Some(sig.as_slice())
                && sig.iter().all(Type::is_concrete)
                && table.contains(callee, sig)
        }
        _ => true,
    }
}

/// Checks every instance against a fresh inference of its original at the
/// instance signature.
pub fn max_devirt_table(types: &TypeTable, table: &MethodTable) -> Result<(), Witness> {
    let origs = originals(table);
    let mut inf = Inferencer::new(types, &origs);
    for m in table.instances() {
        let Some(body) = m.body.instrs() else { continue };
        let typing = inf.infer_method(&m.name, &m.params).map_err(|e| Witness {
            method: m.to_string(),
            index: None,
            reason: format!("inference failed: {e}"),
        })?;
        if typing.len() != m.params.len() + body.len() {
            return Err(Witness {
                method: m.to_string(),
                index: None,
                reason: "body length differs from its original".into(),
            });
        }
        if let Some(i) = body
            .iter()
            .position(|instr| !max_devirt_instr(types, &typing, table, instr))
        {
            return Err(Witness {
                method: m.to_string(),
                index: Some(i),
                reason: format!("not maximally devirtualized: {}", body[i]),
            });
        }
    }
    Ok(())
}

/// True iff the body contains no dispatched call.
pub fn fully_devirtualized(method: &Method) -> bool {
    !method.instrs().iter().any(Instr::is_dispatch)
}

/// Checks that `opt` optimizes `orig`: it has exactly the originals of
/// `orig`, and each instance body equals its original body except for
/// dispatched calls replaced by direct calls to the right target.
pub fn table_optimizes(types: &TypeTable, orig: &MethodTable, opt: &MethodTable) -> Result<(), Witness> {
    if &originals(opt) != orig {
        return Err(Witness {
            method: "<table>".into(),
            index: None,
            reason: "original methods differ".into(),
        });
    }
    let mut inf = Inferencer::new(types, orig);
    for m in opt.instances() {
        let Some(body) = m.body.instrs() else { continue };
        let fail = |index, reason: String| Witness {
            method: m.to_string(),
            index,
            reason,
        };
        let source = orig
            .lookup_exact(&m.name, &m.origin)
            .ok_or_else(|| fail(None, format!("no original {}({})", m.name, SigDisplay(&m.origin))))?;
        let typing = inf
            .infer_body(&m.params, source.instrs())
            .map_err(|e| fail(None, format!("inference failed: {e}")))?;
        if body.len() != source.instrs().len() {
            return Err(fail(None, "body length differs from its original".into()));
        }
        for (i, (o, s)) in source.instrs().iter().zip(body.iter()).enumerate() {
            if !instr_optimizes(types, orig, opt, &typing, o, s) {
                return Err(fail(Some(i), format!("{s} does not optimize {o}")));
            }
        }
    }
    Ok(())
}

fn instr_optimizes(
    types: &TypeTable,
    orig: &MethodTable,
    opt: &MethodTable,
    typing: &RegisterTyping,
    source: &Instr,
    compiled: &Instr,
) -> bool {
    if source == compiled {
        return true;
    }
    let (
        Op::Call {
            guard: g1,
            callee: m1,
            args: a1,
            alt: l1,
        },
        Op::Invoke {
            guard: g2,
            callee: m2,
            sig,
            args: a2,
            alt: l2,
        },
    ) = (&source.op, &compiled.op)
    else {
        return false;
    };
    if source.target != compiled.target || g1 != g2 || m1 != m2 || a1 != a2 || l1 != l2 {
        return false;
    }
    if arg_types(typing, a1).as_deref() != Some(sig.as_slice()) {
        return false;
    }
    match (dispatch(types, orig, m1, sig), opt.lookup_exact(m2, sig)) {
        (Ok(target), Some(entry)) => target.params == entry.origin,
        _ => false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CensusReport {
    pub instance_count: usize,
    pub classified: usize,
    pub stable_count: usize,
    pub grounded_count: usize,
    pub stable_fraction: f64,
    pub grounded_fraction: f64,
    pub zero_denominator: bool,
    pub failed: Vec<String>,
    pub instances: Vec<StabilityReport>,
}

/// Classifies every compiled instance. Fractions are taken over the
/// instances whose classification succeeded; with none they are 1.0 and
/// `zero_denominator` is set.
pub fn census(types: &TypeTable, table: &MethodTable) -> CensusReport {
    let origs = originals(table);
    let mut inf = Inferencer::new(types, &origs);
    let mut instances = Vec::new();
    let mut failed = Vec::new();
    let mut instance_count = 0;
    for m in table.instances() {
        instance_count += 1;
        match classify_with(&mut inf, &m.name, &m.params) {
            Ok(r) => instances.push(r),
            Err(e) => failed.push(format!("{m}: {e}")),
        }
    }
    let n = instances.len();
    let stable_count = instances.iter().filter(|r| r.stable).count();
    let grounded_count = instances.iter().filter(|r| r.grounded).count();
    let frac = |k: usize| if n == 0 { 1.0 } else { k as f64 / n as f64 };
    CensusReport {
        instance_count,
        classified: n,
        stable_count,
        grounded_count,
        stable_fraction: frac(stable_count),
        grounded_fraction: frac(grounded_count),
        zero_denominator: n == 0,
        failed,
        instances,
    }
}
