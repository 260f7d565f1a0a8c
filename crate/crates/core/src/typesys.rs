//! Subtyping over the declared hierarchy, the join used by inference, and
//! multiple dispatch.
//!
//! The hierarchy has three levels: concrete types at the bottom, abstract
//! types in a flat layer above them, and `Any` on top. Every concrete type
//! has exactly one declared supertype (`Int` sits directly under `Any`).

use std::sync::Arc;

use thiserror::Error;

use crate::ir::{Method, MethodTable, SigDisplay, Type, TypeTable};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TypeError {
    #[error("undeclared type `{0}`")]
    Undeclared(Type),
}

fn check(types: &TypeTable, t: &Type) -> Result<(), TypeError> {
    if types.is_declared(t) {
        Ok(())
    } else {
        Err(TypeError::Undeclared(t.clone()))
    }
}

/// `sub <: sup`, assuming both types are declared.
pub fn is_subtype(types: &TypeTable, sub: &Type, sup: &Type) -> bool {
    if sub == sup || sup.is_any() {
        return true;
    }
    match (sub, sup) {
        (Type::Concrete(c), Type::Abstract(_)) => types.supertype(c).as_ref() == Some(sup),
        _ => false,
    }
}

/// Checked subtyping: fails on undeclared type names.
pub fn subtype(types: &TypeTable, sub: &Type, sup: &Type) -> Result<bool, TypeError> {
    check(types, sub)?;
    check(types, sup)?;
    Ok(is_subtype(types, sub, sup))
}

/// Pointwise subtyping of equal-length signatures.
pub fn sig_subtype(types: &TypeTable, sub: &[Type], sup: &[Type]) -> bool {
    sub.len() == sup.len() && sub.iter().zip(sup).all(|(a, b)| is_subtype(types, a, b))
}

/// Least upper bound, assuming both types are declared.
pub fn join_types(types: &TypeTable, a: &Type, b: &Type) -> Type {
    if a == b {
        return a.clone();
    }
    match (a, b) {
        (Type::Concrete(x), Type::Concrete(y)) => match (types.supertype(x), types.supertype(y)) {
            (Some(sx), Some(sy)) if sx == sy => sx,
            _ => Type::any(),
        },
        (Type::Concrete(_), abs @ Type::Abstract(_)) | (abs @ Type::Abstract(_), Type::Concrete(_)) => {
            let c = if a.is_concrete() { a } else { b };
            if is_subtype(types, c, abs) {
                abs.clone()
            } else {
                Type::any()
            }
        }
        _ => Type::any(),
    }
}

/// Checked join: fails on undeclared type names.
pub fn join(types: &TypeTable, a: &Type, b: &Type) -> Result<Type, TypeError> {
    check(types, a)?;
    check(types, b)?;
    Ok(join_types(types, a, b))
}

/// Why a dispatch is undefined (or was not attempted).
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DispatchError {
    #[error("no method {name}({}) is applicable", SigDisplay(.args))]
    NoApplicable { name: String, args: Vec<Type> },
    #[error("ambiguous call {name}({}): {} candidates", SigDisplay(.args), .candidates.len())]
    Ambiguous {
        name: String,
        args: Vec<Type>,
        candidates: Vec<Vec<Type>>,
    },
    /// Dispatch is only defined on concrete argument types.
    #[error("dispatch on non-concrete argument type `{0}`")]
    NonConcrete(Type),
}

impl DispatchError {
    /// True for the two outcomes that make a runtime call err.
    pub fn is_undefined(&self) -> bool {
        !matches!(self, DispatchError::NonConcrete(_))
    }
}

/// Selects the unique most specific method applicable to concrete `args`.
pub fn dispatch<'t>(
    types: &TypeTable,
    table: &'t MethodTable,
    name: &str,
    args: &[Type],
) -> Result<&'t Arc<Method>, DispatchError> {
    if let Some(t) = args.iter().find(|t| !t.is_concrete()) {
        return Err(DispatchError::NonConcrete(t.clone()));
    }
    // An exact entry is below every applicable signature.
    if let Some(m) = table.lookup_exact(name, args) {
        return Ok(m);
    }
    let applicable: Vec<&Arc<Method>> = table
        .methods_named(name)
        .filter(|m| sig_subtype(types, args, &m.params))
        .collect();
    let mut best = applicable
        .iter()
        .filter(|m| applicable.iter().all(|o| sig_subtype(types, &m.params, &o.params)));
    match (best.next(), applicable.is_empty()) {
        (Some(m), _) => Ok(m),
        (None, true) => Err(DispatchError::NoApplicable {
            name: name.to_string(),
            args: args.to_vec(),
        }),
        (None, false) => Err(DispatchError::Ambiguous {
            name: name.to_string(),
            args: args.to_vec(),
            candidates: applicable.iter().map(|m| m.params.clone()).collect(),
        }),
    }
}
