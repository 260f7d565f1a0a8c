//! Forward type inference over straight-line bodies.
//!
//! Each register gets one type. Dispatched calls whose argument types are
//! all concrete are typed by the return type of the dispatch target,
//! inferred at those argument types; every other dispatched call is typed
//! `Any`. The call result is then joined with the type of the alternative
//! register.
//!
//! Return types of recursive call chains are solved as the greatest
//! fixpoint of the call-key equations: every key starts at `Any` and is
//! refined by re-evaluating bodies until nothing changes. A call cycle
//! whose result feeds back into itself therefore stays at `Any`. The
//! greatest fixpoint is unique, so results do not depend on which keys
//! were solved first or on the contents of the cache.

use std::collections::HashMap;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use crate::ir::{Ident, Instr, Method, MethodTable, Op, Reg, SigDisplay, Type, TypeTable};
use crate::typesys::{dispatch, is_subtype, join_types};

/// Per-register types of one activation: parameters first, then one entry
/// per instruction. The last entry is the return type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct RegisterTyping(pub Vec<Type>);

impl RegisterTyping {
    pub fn return_type(&self) -> Option<&Type> {
        self.0.last()
    }

    pub fn get(&self, r: Reg) -> Option<&Type> {
        self.0.get(r.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn all_concrete(&self) -> bool {
        self.0.iter().all(Type::is_concrete)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InferError {
    #[error("register {reg} is not defined before {instr}")]
    BadRegister { instr: String, reg: Reg },
    #[error("field access on non-concrete type `{ty}` in {instr}")]
    FieldOnAbstract { instr: String, ty: Type },
    #[error("field index out of bounds for `{ty}` in {instr}")]
    FieldOutOfBounds { instr: String, ty: Type },
    #[error("`{ty}` is not a declared struct type in {instr}")]
    UnknownStruct { instr: String, ty: Type },
    #[error("wrong number of fields for `{ty}` in {instr}")]
    ArityMismatch { instr: String, ty: Type },
    #[error("argument {reg}: `{actual}` is not a subtype of field type `{expected}` in {instr}")]
    FieldTypeMismatch {
        instr: String,
        reg: Reg,
        actual: Type,
        expected: Type,
    },
    #[error("no original method {name}({}) to infer", SigDisplay(.args))]
    NoTarget { name: String, args: Vec<Type> },
    #[error("stub body reached during inference of {0}")]
    Stub(String),
    #[error("inference of callee {callee} failed")]
    CalleeFailed { callee: String },
}

/// Memo key: a method name and the argument types it is inferred at.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CallKey {
    pub name: Ident,
    pub args: Vec<Type>,
}

impl std::fmt::Display for CallKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}({})", self.name, SigDisplay(&self.args))
    }
}

/// Memoized, fully solved inference results.
#[derive(Clone, Debug, Default)]
pub struct InferenceCache {
    solved: HashMap<CallKey, Result<Arc<RegisterTyping>, InferError>>,
}

impl InferenceCache {
    pub fn len(&self) -> usize {
        self.solved.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solved.is_empty()
    }
}

/// Type inference over a fixed table of original methods.
pub struct Inferencer<'a> {
    types: &'a TypeTable,
    originals: &'a MethodTable,
    cache: InferenceCache,
}

/// How a callee's return type is answered during one body evaluation.
enum CalleeReturn {
    Known(Type),
    Failed,
}

impl<'a> Inferencer<'a> {
    /// `originals` must contain only original methods.
    pub fn new(types: &'a TypeTable, originals: &'a MethodTable) -> Self {
        Self::with_cache(types, originals, InferenceCache::default())
    }

    pub fn with_cache(
        types: &'a TypeTable,
        originals: &'a MethodTable,
        cache: InferenceCache,
    ) -> Self {
        debug_assert!(originals.iter().all(|m| m.is_original()));
        Inferencer {
            types,
            originals,
            cache,
        }
    }

    pub fn types(&self) -> &'a TypeTable {
        self.types
    }

    pub fn originals(&self) -> &'a MethodTable {
        self.originals
    }

    pub fn into_cache(self) -> InferenceCache {
        self.cache
    }

    /// Infers the original method that `name` resolves to at `args`: by
    /// dispatch when all argument types are concrete, otherwise the
    /// original declared at exactly `args`.
    pub fn infer_method(
        &mut self,
        name: &str,
        args: &[Type],
    ) -> Result<Arc<RegisterTyping>, InferError> {
        self.infer_key(CallKey {
            name: name.into(),
            args: args.to_vec(),
        })
    }

    /// Infers an arbitrary body at the given parameter types.
    pub fn infer_body(
        &mut self,
        params: &[Type],
        body: &[Instr],
    ) -> Result<RegisterTyping, InferError> {
        let types = self.types;
        eval_body(types, params, body, true, &mut |callee, args| {
            match self.callee_target(callee, args) {
                None => CalleeReturn::Known(Type::any()),
                Some(key) => match self.infer_key(key) {
                    Ok(t) => CalleeReturn::Known(t.return_type().cloned().unwrap_or_else(Type::any)),
                    Err(_) => CalleeReturn::Failed,
                },
            }
        })
    }

    fn infer_key(&mut self, key: CallKey) -> Result<Arc<RegisterTyping>, InferError> {
        if let Some(r) = self.cache.solved.get(&key) {
            return r.clone();
        }
        let method = self.resolve(&key)?;
        self.solve(key.clone(), method);
        self.cache.solved[&key].clone()
    }

    fn resolve(&self, key: &CallKey) -> Result<Arc<Method>, InferError> {
        let found = if key.args.iter().all(Type::is_concrete) {
            dispatch(self.types, self.originals, &key.name, &key.args).ok()
        } else {
            self.originals.lookup_exact(&key.name, &key.args)
        };
        found.cloned().ok_or_else(|| InferError::NoTarget {
            name: key.name.to_string(),
            args: key.args.clone(),
        })
    }

    /// The key a dispatched call is typed through, if its argument types
    /// are concrete and dispatch is defined.
    fn callee_target(&self, callee: &str, args: &[Type]) -> Option<CallKey> {
        if !args.iter().all(Type::is_concrete) {
            return None;
        }
        dispatch(self.types, self.originals, callee, args).ok()?;
        Some(CallKey {
            name: callee.into(),
            args: args.to_vec(),
        })
    }

    /// Solves `root` and every unsolved key it reaches, then stores them.
    fn solve(&mut self, root: CallKey, root_method: Arc<Method>) {
        // key -> (resolved original, current return-type estimate)
        let mut pending: IndexMap<CallKey, (Arc<Method>, Type)> = IndexMap::new();
        pending.insert(root, (root_method, Type::any()));

        loop {
            let mut changed = false;
            let mut i = 0;
            while i < pending.len() {
                let (key, (method, _)) = pending.get_index(i).unwrap();
                let (key, method) = (key.clone(), method.clone());
                let mut discovered = Vec::new();
                let ret = {
                    let pending = &pending;
                    let cache = &self.cache;
                    let mut lookup = |callee: &str, args: &[Type]| {
                        let Some(k) = self.callee_target(callee, args) else {
                            return CalleeReturn::Known(Type::any());
                        };
                        if let Some(r) = cache.solved.get(&k) {
                            return match r {
                                Ok(t) => CalleeReturn::Known(t.return_type().cloned().unwrap_or_else(Type::any)),
                                Err(_) => CalleeReturn::Known(Type::any()),
                            };
                        }
                        if let Some((_, t)) = pending.get(&k) {
                            return CalleeReturn::Known(t.clone());
                        }
                        discovered.push(k);
                        CalleeReturn::Known(Type::any())
                    };
                    body_return(self.types, &key, &method, false, &mut lookup)
                };
                for k in discovered {
                    if !pending.contains_key(&k) {
                        if let Ok(m) = self.resolve(&k) {
                            pending.insert(k, (m, Type::any()));
                            changed = true;
                        }
                    }
                }
                let slot = &mut pending[i].1;
                if let Some(ret) = ret {
                    if ret != *slot {
                        debug_assert!(is_subtype(self.types, &ret, slot));
                        *slot = ret;
                        changed = true;
                    }
                }
                i += 1;
            }
            if !changed {
                break;
            }
        }

        // Final strict pass at the fixpoint, then propagate callee failures.
        let mut results: IndexMap<CallKey, Result<RegisterTyping, InferError>> = IndexMap::new();
        let mut callers: HashMap<CallKey, Vec<CallKey>> = HashMap::new();
        for (key, (method, _)) in &pending {
            let r = match method.body.instrs() {
                None => Err(InferError::Stub(key.to_string())),
                Some(body) => {
                    let cache = &self.cache;
                    let pending = &pending;
                    let mut lookup = |callee: &str, args: &[Type]| {
                        let Some(k) = self.callee_target(callee, args) else {
                            return CalleeReturn::Known(Type::any());
                        };
                        if let Some(r) = cache.solved.get(&k) {
                            return match r {
                                Ok(t) => CalleeReturn::Known(t.return_type().cloned().unwrap_or_else(Type::any)),
                                Err(_) => CalleeReturn::Failed,
                            };
                        }
                        match pending.get(&k) {
                            Some((_, t)) => {
                                callers.entry(k).or_default().push(key.clone());
                                CalleeReturn::Known(t.clone())
                            }
                            None => CalleeReturn::Failed,
                        }
                    };
                    eval_body(self.types, &key.args, body, true, &mut lookup)
                }
            };
            results.insert(key.clone(), r);
        }
        let mut work: Vec<CallKey> = results
            .iter()
            .filter(|(_, r)| r.is_err())
            .map(|(k, _)| k.clone())
            .collect();
        while let Some(bad) = work.pop() {
            for caller in callers.get(&bad).into_iter().flatten() {
                if results[caller].is_ok() {
                    results[caller] = Err(InferError::CalleeFailed {
                        callee: bad.to_string(),
                    });
                    work.push(caller.clone());
                }
            }
        }
        for (k, r) in results {
            self.cache.solved.insert(k, r.map(Arc::new));
        }
    }
}

fn body_return(
    types: &TypeTable,
    key: &CallKey,
    method: &Method,
    strict: bool,
    lookup: &mut dyn FnMut(&str, &[Type]) -> CalleeReturn,
) -> Option<Type> {
    let body = method.body.instrs()?;
    eval_body(types, &key.args, body, strict, lookup)
        .ok()
        .and_then(|t| t.0.last().cloned())
}

/// One forward pass over a body. In lenient mode every ill-typed
/// instruction is typed `Any` instead of failing, which keeps the pass
/// monotone while return-type estimates are still descending.
fn eval_body(
    types: &TypeTable,
    params: &[Type],
    body: &[Instr],
    strict: bool,
    lookup: &mut dyn FnMut(&str, &[Type]) -> CalleeReturn,
) -> Result<RegisterTyping, InferError> {
    let mut regs: Vec<Type> = Vec::with_capacity(params.len() + body.len());
    regs.extend_from_slice(params);
    for instr in body {
        let t = match eval_instr(types, &regs, instr, lookup) {
            Ok(t) => t,
            Err(e) if strict => return Err(e),
            Err(_) => Type::any(),
        };
        regs.push(t);
    }
    Ok(RegisterTyping(regs))
}

fn eval_instr(
    types: &TypeTable,
    regs: &[Type],
    instr: &Instr,
    lookup: &mut dyn FnMut(&str, &[Type]) -> CalleeReturn,
) -> Result<Type, InferError> {
    let get = |r: Reg| {
        regs.get(r.0).ok_or_else(|| InferError::BadRegister {
            instr: instr.to_string(),
            reg: r,
        })
    };
    match &instr.op {
        Op::Const(_) => Ok(Type::int()),
        Op::Copy(r) => get(*r).cloned(),
        Op::New { ty, args } => {
            let fields = match ty {
                Type::Concrete(_) if !ty.is_int() => types.fields(ty),
                _ => None,
            }
            .ok_or_else(|| InferError::UnknownStruct {
                instr: instr.to_string(),
                ty: ty.clone(),
            })?;
            if fields.len() != args.len() {
                return Err(InferError::ArityMismatch {
                    instr: instr.to_string(),
                    ty: ty.clone(),
                });
            }
            for (r, ft) in args.iter().zip(fields) {
                let at = get(*r)?;
                if !is_subtype(types, at, ft) {
                    return Err(InferError::FieldTypeMismatch {
                        instr: instr.to_string(),
                        reg: *r,
                        actual: at.clone(),
                        expected: ft.clone(),
                    });
                }
            }
            Ok(ty.clone())
        }
        Op::Field { recv, index } => {
            let rt = get(*recv)?;
            if !rt.is_concrete() {
                return Err(InferError::FieldOnAbstract {
                    instr: instr.to_string(),
                    ty: rt.clone(),
                });
            }
            types
                .fields(rt)
                .and_then(|fs| fs.get(*index))
                .cloned()
                .ok_or_else(|| InferError::FieldOutOfBounds {
                    instr: instr.to_string(),
                    ty: rt.clone(),
                })
        }
        Op::Call {
            guard,
            callee,
            args,
            alt,
        } => {
            get(*guard)?;
            let arg_types = args.iter().map(|r| get(*r).cloned()).collect::<Result<Vec<_>, _>>()?;
            let alt_t = get(*alt)?;
            match lookup(callee, &arg_types) {
                CalleeReturn::Known(r) => Ok(join_types(types, &r, alt_t)),
                CalleeReturn::Failed => Err(InferError::CalleeFailed {
                    callee: format!("{callee}({})", SigDisplay(&arg_types)),
                }),
            }
        }
        Op::Invoke {
            guard,
            callee,
            sig,
            args,
            alt,
        } => {
            get(*guard)?;
            for r in args {
                get(*r)?;
            }
            let alt_t = get(*alt)?;
            match lookup(callee, sig) {
                CalleeReturn::Known(r) => Ok(join_types(types, &r, alt_t)),
                CalleeReturn::Failed => Err(InferError::CalleeFailed {
                    callee: format!("{callee}[{}]", SigDisplay(sig)),
                }),
            }
        }
    }
}

/// Infers `body` at `params` over `originals` with a caller-provided cache.
pub fn infer_body(
    types: &TypeTable,
    originals: &MethodTable,
    params: &[Type],
    body: &[Instr],
    cache: &mut InferenceCache,
) -> Result<RegisterTyping, InferError> {
    let mut inf = Inferencer::with_cache(types, originals, std::mem::take(cache));
    let r = inf.infer_body(params, body);
    *cache = inf.into_cache();
    r
}

/// Infers the original `name` resolves to at `args` with a caller-provided
/// cache.
pub fn infer_method(
    types: &TypeTable,
    originals: &MethodTable,
    name: &str,
    args: &[Type],
    cache: &mut InferenceCache,
) -> Result<Arc<RegisterTyping>, InferError> {
    let mut inf = Inferencer::with_cache(types, originals, std::mem::take(cache));
    let r = inf.infer_method(name, args);
    *cache = inf.into_cache();
    r
}
