//! Core data model: nominal types, the type table, instructions, methods and
//! method tables, plus the static well-formedness validator.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::infer::Inferencer;
use crate::typesys;

/// Interned identifier. Cheap to clone and safe to share across threads.
pub type Ident = Arc<str>;

pub const INT: &str = "Int";
pub const ANY: &str = "Any";
pub const MAIN: &str = "main";

/// A nominal type. Concrete types can be instantiated and have no proper
/// subtypes; abstract types only serve as supertypes.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Type {
    Concrete(Ident),
    Abstract(Ident),
}

impl Type {
    pub fn int() -> Type {
        Type::Concrete(INT.into())
    }

    pub fn any() -> Type {
        Type::Abstract(ANY.into())
    }

    pub fn concrete(name: &str) -> Type {
        Type::Concrete(name.into())
    }

    pub fn abstract_(name: &str) -> Type {
        Type::Abstract(name.into())
    }

    pub fn name(&self) -> &Ident {
        match self {
            Type::Concrete(n) | Type::Abstract(n) => n,
        }
    }

    pub fn is_concrete(&self) -> bool {
        matches!(self, Type::Concrete(_))
    }

    pub fn is_int(&self) -> bool {
        matches!(self, Type::Concrete(n) if &**n == INT)
    }

    pub fn is_any(&self) -> bool {
        matches!(self, Type::Abstract(n) if &**n == ANY)
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Debug for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Concrete(n) => write!(f, "{n}"),
            Type::Abstract(n) => write!(f, "{n}?"),
        }
    }
}

impl Serialize for Type {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

/// Formats a type list as `T1, T2`.
pub struct SigDisplay<'a>(pub &'a [Type]);

impl fmt::Display for SigDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// One `type C(fields) <: A` declaration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypeDecl {
    pub name: Ident,
    pub fields: Vec<Type>,
    pub supertype: Ident,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TypeTableError {
    #[error("type `{0}` is predefined and cannot be declared")]
    Reserved(Ident),
    #[error("type `{0}` is declared more than once")]
    Duplicate(Ident),
    #[error("supertype `{0}` of a declared type must be abstract")]
    ConcreteSupertype(Ident),
}

/// The immutable type table. Entries keep declaration order.
#[derive(Clone, Debug, Default)]
pub struct TypeTable {
    decls: Vec<TypeDecl>,
    index: HashMap<Ident, usize>,
}

impl PartialEq for TypeTable {
    fn eq(&self, other: &Self) -> bool {
        self.decls == other.decls
    }
}

impl Eq for TypeTable {}

impl TypeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, decl: TypeDecl) -> Result<(), TypeTableError> {
        if &*decl.name == INT || &*decl.name == ANY {
            return Err(TypeTableError::Reserved(decl.name));
        }
        if &*decl.supertype == INT || self.index.contains_key(&decl.supertype) {
            return Err(TypeTableError::ConcreteSupertype(decl.supertype));
        }
        if self.index.contains_key(&decl.name) || self.decls.iter().any(|d| d.supertype == decl.name)
        {
            return Err(TypeTableError::Duplicate(decl.name));
        }
        self.index.insert(decl.name.clone(), self.decls.len());
        self.decls.push(decl);
        Ok(())
    }

    pub fn decls(&self) -> &[TypeDecl] {
        &self.decls
    }

    pub fn is_empty(&self) -> bool {
        self.decls.is_empty()
    }

    pub fn struct_decl(&self, name: &str) -> Option<&TypeDecl> {
        self.index.get(name).map(|&i| &self.decls[i])
    }

    /// Field types of a concrete type; `Int` has none.
    pub fn fields(&self, ty: &Type) -> Option<&[Type]> {
        match ty {
            Type::Concrete(n) if &**n == INT => Some(&[]),
            Type::Concrete(n) => self.struct_decl(n).map(|d| d.fields.as_slice()),
            Type::Abstract(_) => None,
        }
    }

    /// The declared abstract supertype of a concrete type. `Int` sits directly
    /// under `Any`.
    pub fn supertype(&self, name: &str) -> Option<Type> {
        if name == INT {
            return Some(Type::any());
        }
        self.struct_decl(name)
            .map(|d| Type::Abstract(d.supertype.clone()))
    }

    /// Abstract types introduced as supertypes, in first-appearance order.
    pub fn abstracts(&self) -> Vec<Ident> {
        let mut seen = HashSet::new();
        self.decls
            .iter()
            .filter(|d| &*d.supertype != ANY && seen.insert(d.supertype.clone()))
            .map(|d| d.supertype.clone())
            .collect()
    }

    /// Concrete children of an abstract type, `Int` included under `Any`.
    pub fn children_of(&self, abs: &str) -> Vec<Type> {
        let mut out = Vec::new();
        if abs == ANY {
            out.push(Type::int());
        }
        out.extend(
            self.decls
                .iter()
                .filter(|d| abs == ANY || &*d.supertype == abs)
                .map(|d| Type::Concrete(d.name.clone())),
        );
        out
    }

    pub fn is_declared(&self, ty: &Type) -> bool {
        match ty {
            Type::Concrete(n) => &**n == INT || self.index.contains_key(n),
            Type::Abstract(n) => &**n == ANY || self.decls.iter().any(|d| d.supertype == *n),
        }
    }

    /// Resolves a bare type name the way the textual format does: `Int` and
    /// declared struct names are concrete, everything else is abstract.
    pub fn resolve(&self, name: &str) -> Type {
        if name == INT || self.index.contains_key(name) {
            Type::Concrete(name.into())
        } else {
            Type::Abstract(name.into())
        }
    }

    /// Every type in the table: `Int`, `Any`, declared concretes, abstracts.
    pub fn all_types(&self) -> Vec<Type> {
        let mut out = vec![Type::int(), Type::any()];
        out.extend(self.decls.iter().map(|d| Type::Concrete(d.name.clone())));
        out.extend(self.abstracts().into_iter().map(Type::Abstract));
        out
    }
}

/// Register index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(pub usize);

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Const(i64),
    Copy(Reg),
    New { ty: Type, args: Vec<Reg> },
    Field { recv: Reg, index: usize },
    /// Dispatched call: `if guard call callee(args) else alt`.
    Call {
        guard: Reg,
        callee: Ident,
        args: Vec<Reg>,
        alt: Reg,
    },
    /// Direct call to the exact table entry `callee[sig]`.
    Invoke {
        guard: Reg,
        callee: Ident,
        sig: Vec<Type>,
        args: Vec<Reg>,
        alt: Reg,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Instr {
    pub target: Reg,
    pub op: Op,
}

impl Instr {
    pub fn new(target: usize, op: Op) -> Self {
        Instr {
            target: Reg(target),
            op,
        }
    }

    /// Registers read by this instruction, in operand order.
    pub fn reads(&self) -> Vec<Reg> {
        match &self.op {
            Op::Const(_) => vec![],
            Op::Copy(r) => vec![*r],
            Op::New { args, .. } => args.clone(),
            Op::Field { recv, .. } => vec![*recv],
            Op::Call {
                guard, args, alt, ..
            }
            | Op::Invoke {
                guard, args, alt, ..
            } => {
                let mut v = Vec::with_capacity(args.len() + 2);
                v.push(*guard);
                v.extend(args.iter().copied());
                v.push(*alt);
                v
            }
        }
    }

    pub fn is_dispatch(&self) -> bool {
        matches!(self.op, Op::Call { .. })
    }

    pub fn is_invoke(&self) -> bool {
        matches!(self.op, Op::Invoke { .. })
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn regs(f: &mut fmt::Formatter<'_>, rs: &[Reg]) -> fmt::Result {
            for (i, r) in rs.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{r}")?;
            }
            Ok(())
        }
        write!(f, "{} = ", self.target)?;
        match &self.op {
            Op::Const(p) => write!(f, "const {p}"),
            Op::Copy(r) => write!(f, "reg {r}"),
            Op::New { ty, args } => {
                write!(f, "new {ty}(")?;
                regs(f, args)?;
                f.write_str(")")
            }
            Op::Field { recv, index } => write!(f, "field {recv} {index}"),
            Op::Call {
                guard,
                callee,
                args,
                alt,
            } => {
                write!(f, "if {guard} call {callee}(")?;
                regs(f, args)?;
                write!(f, ") else {alt}")
            }
            Op::Invoke {
                guard,
                callee,
                sig,
                args,
                alt,
            } => {
                write!(f, "if {guard} invoke {callee}[")?;
                for (i, t) in sig.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str("](")?;
                regs(f, args)?;
                write!(f, ") else {alt}")
            }
        }
    }
}

/// A method body, or the stub placeholder used while compiling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body {
    Stub,
    Code(Arc<[Instr]>),
}

impl Body {
    pub fn code(instrs: Vec<Instr>) -> Body {
        Body::Code(instrs.into())
    }

    pub fn instrs(&self) -> Option<&[Instr]> {
        match self {
            Body::Stub => None,
            Body::Code(c) => Some(c),
        }
    }

    pub fn is_stub(&self) -> bool {
        matches!(self, Body::Stub)
    }
}

/// A method table entry. `origin` is the signature of the original method
/// this entry was compiled from; originals have `origin == params`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Method {
    pub name: Ident,
    pub params: Vec<Type>,
    pub body: Body,
    pub origin: Vec<Type>,
}

impl Method {
    pub fn original(name: &str, params: Vec<Type>, body: Vec<Instr>) -> Method {
        Method {
            name: name.into(),
            origin: params.clone(),
            params,
            body: Body::code(body),
        }
    }

    pub fn is_original(&self) -> bool {
        self.params == self.origin
    }

    pub fn instrs(&self) -> &[Instr] {
        self.body.instrs().unwrap_or(&[])
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name, SigDisplay(&self.params))
    }
}

/// Methods keyed by `(name, params)`. Cloning yields an independent table;
/// bodies are shared.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MethodTable {
    by_name: BTreeMap<Ident, BTreeMap<Vec<Type>, Arc<Method>>>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("method `{name}({})` is defined more than once", SigDisplay(.params))]
pub struct DuplicateMethod {
    pub name: Ident,
    pub params: Vec<Type>,
}

impl MethodTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_methods(
        methods: impl IntoIterator<Item = Method>,
    ) -> Result<Self, DuplicateMethod> {
        let mut t = MethodTable::new();
        for m in methods {
            t.add(m)?;
        }
        Ok(t)
    }

    /// Adds a method whose key must not be present yet.
    pub fn add(&mut self, m: Method) -> Result<(), DuplicateMethod> {
        let group = self.by_name.entry(m.name.clone()).or_default();
        if group.contains_key(&m.params) {
            return Err(DuplicateMethod {
                name: m.name,
                params: m.params,
            });
        }
        group.insert(m.params.clone(), Arc::new(m));
        Ok(())
    }

    /// Inserts or replaces the entry keyed by `(m.name, m.params)`.
    pub fn insert(&mut self, m: Method) {
        self.by_name
            .entry(m.name.clone())
            .or_default()
            .insert(m.params.clone(), Arc::new(m));
    }

    pub fn remove(&mut self, name: &str, params: &[Type]) -> Option<Arc<Method>> {
        let group = self.by_name.get_mut(name)?;
        let m = group.remove(params);
        if group.is_empty() {
            self.by_name.remove(name);
        }
        m
    }

    /// Exact-signature lookup, no subtyping.
    pub fn lookup_exact(&self, name: &str, sig: &[Type]) -> Option<&Arc<Method>> {
        self.by_name.get(name)?.get(sig)
    }

    pub fn contains(&self, name: &str, sig: &[Type]) -> bool {
        self.lookup_exact(name, sig).is_some()
    }

    pub fn has_name(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    /// All methods sharing a name, ordered by signature.
    pub fn methods_named(&self, name: &str) -> impl Iterator<Item = &Arc<Method>> {
        self.by_name.get(name).into_iter().flat_map(|g| g.values())
    }

    /// All methods ordered by `(name, signature)`.
    pub fn iter(&self) -> impl Iterator<Item = &Arc<Method>> {
        self.by_name.values().flat_map(|g| g.values())
    }

    pub fn names(&self) -> impl Iterator<Item = &Ident> {
        self.by_name.keys()
    }

    pub fn len(&self) -> usize {
        self.by_name.values().map(|g| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    pub fn instances(&self) -> impl Iterator<Item = &Arc<Method>> {
        self.iter().filter(|m| !m.is_original())
    }

    pub fn has_stubs(&self) -> bool {
        self.iter().any(|m| m.body.is_stub())
    }
}

/// The sub-table of original (source) methods.
pub fn originals(table: &MethodTable) -> MethodTable {
    MethodTable {
        by_name: table
            .by_name
            .iter()
            .filter_map(|(name, group)| {
                let g: BTreeMap<_, _> = group
                    .iter()
                    .filter(|(_, m)| m.is_original())
                    .map(|(k, m)| (k.clone(), m.clone()))
                    .collect();
                (!g.is_empty()).then(|| (name.clone(), g))
            })
            .collect(),
    }
}

pub fn lookup_exact<'a>(table: &'a MethodTable, name: &str, sig: &[Type]) -> Option<&'a Method> {
    table.lookup_exact(name, sig).map(|m| &**m)
}

/// A violated well-formedness clause.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Diagnostic {
    #[error("missing entry method main()")]
    MissingMain,
    #[error("type table: {0}")]
    BadTypeDecl(String),
    #[error("{method}: undeclared type `{ty}`")]
    UndeclaredType { method: String, ty: String },
    #[error("{method}: register numbering: instruction {position} assigns {found}, expected %{expected}")]
    RegisterNumbering {
        method: String,
        position: usize,
        found: Reg,
        expected: usize,
    },
    #[error("{method}: register refers forward: {instr} reads {read}")]
    ForwardReference {
        method: String,
        instr: String,
        read: Reg,
    },
    #[error("{method}: empty body")]
    EmptyBody { method: String },
    #[error("{method}: stub body in a method table")]
    StubBody { method: String },
    #[error("{method}: direct call in an original method")]
    DirectCallInOriginal { method: String },
    #[error("{method}: type inference failed: {reason}")]
    InferenceFailed { method: String, reason: String },
    #[error("{method}: call to unknown method `{callee}`")]
    UnknownCallee { method: String, callee: String },
    #[error("{method}: direct call target {target} is not in the table")]
    MissingInvokeTarget { method: String, target: String },
    #[error("{method}: instance signature is not concrete")]
    NonConcreteInstance { method: String },
    #[error("{method}: instance signature is not below its origin ({origin})")]
    InstanceNotBelowOrigin { method: String, origin: String },
    #[error("{method}: origin {origin} is not an original method of the table")]
    MissingOrigin { method: String, origin: String },
    #[error("{method}: instance not for most specific original (origin {origin}, more specific {other})")]
    NotMostSpecificOrigin {
        method: String,
        origin: String,
        other: String,
    },
}

/// Checks every well-formedness clause and returns one diagnostic per
/// violation. An empty result means the table is well-formed.
pub fn validate(types: &TypeTable, table: &MethodTable) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    validate_types(types, &mut diags);

    if !table.contains(MAIN, &[]) {
        diags.push(Diagnostic::MissingMain);
    }

    let origs = originals(table);
    let mut inferencer = Inferencer::new(types, &origs);

    for m in table.iter() {
        let who = m.to_string();
        let undeclared = |t: &Type, diags: &mut Vec<Diagnostic>| {
            if !types.is_declared(t) {
                diags.push(Diagnostic::UndeclaredType {
                    method: who.clone(),
                    ty: t.to_string(),
                });
            }
        };
        for t in m.params.iter().chain(&m.origin) {
            undeclared(t, &mut diags);
        }

        let body = match &m.body {
            Body::Stub => {
                diags.push(Diagnostic::StubBody { method: who });
                continue;
            }
            Body::Code(c) => c,
        };
        if body.is_empty() {
            diags.push(Diagnostic::EmptyBody {
                method: who.clone(),
            });
        }

        let nparams = m.params.len();
        let mut numbering_ok = true;
        for (pos, instr) in body.iter().enumerate() {
            let expected = nparams + pos;
            if instr.target.0 != expected {
                numbering_ok = false;
                diags.push(Diagnostic::RegisterNumbering {
                    method: who.clone(),
                    position: pos,
                    found: instr.target,
                    expected,
                });
            }
            for r in instr.reads() {
                if r.0 >= instr.target.0 || r.0 >= expected {
                    numbering_ok = false;
                    diags.push(Diagnostic::ForwardReference {
                        method: who.clone(),
                        instr: instr.to_string(),
                        read: r,
                    });
                }
            }
            match &instr.op {
                Op::New { ty, .. } => undeclared(ty, &mut diags),
                Op::Call { callee, .. } => {
                    if !table.has_name(callee) {
                        diags.push(Diagnostic::UnknownCallee {
                            method: who.clone(),
                            callee: callee.to_string(),
                        });
                    }
                }
                Op::Invoke { callee, sig, .. } => {
                    for t in sig {
                        undeclared(t, &mut diags);
                    }
                    if m.is_original() {
                        diags.push(Diagnostic::DirectCallInOriginal {
                            method: who.clone(),
                        });
                    }
                    if !table.contains(callee, sig) {
                        diags.push(Diagnostic::MissingInvokeTarget {
                            method: who.clone(),
                            target: format!("{callee}[{}]", SigDisplay(sig)),
                        });
                    }
                }
                _ => {}
            }
        }

        if m.is_original() {
            if numbering_ok && !body.is_empty() && !body.iter().any(Instr::is_invoke) {
                if let Err(e) = inferencer.infer_body(&m.params, body) {
                    diags.push(Diagnostic::InferenceFailed {
                        method: who.clone(),
                        reason: e.to_string(),
                    });
                }
            }
        } else {
            check_instance(types, table, m, &who, &mut diags);
        }
    }
    diags
}

fn validate_types(types: &TypeTable, diags: &mut Vec<Diagnostic>) {
    for d in types.decls() {
        for f in &d.fields {
            if !types.is_declared(f) {
                diags.push(Diagnostic::BadTypeDecl(format!(
                    "field type `{f}` of `{}` is not declared",
                    d.name
                )));
            }
        }
    }
}

fn check_instance(
    types: &TypeTable,
    table: &MethodTable,
    m: &Method,
    who: &str,
    diags: &mut Vec<Diagnostic>,
) {
    if !m.params.iter().all(Type::is_concrete) {
        diags.push(Diagnostic::NonConcreteInstance {
            method: who.to_string(),
        });
        return;
    }
    let origin = format!("{}({})", m.name, SigDisplay(&m.origin));
    if !typesys::sig_subtype(types, &m.params, &m.origin) {
        diags.push(Diagnostic::InstanceNotBelowOrigin {
            method: who.to_string(),
            origin: origin.clone(),
        });
    }
    match table.lookup_exact(&m.name, &m.origin) {
        Some(o) if o.is_original() => {}
        _ => {
            diags.push(Diagnostic::MissingOrigin {
                method: who.to_string(),
                origin,
            });
            return;
        }
    }
    // Only the most specific applicable original may own instances.
    for other in table.methods_named(&m.name).filter(|o| o.is_original()) {
        if typesys::sig_subtype(types, &m.params, &other.params)
            && !typesys::sig_subtype(types, &m.origin, &other.params)
        {
            diags.push(Diagnostic::NotMostSpecificOrigin {
                method: who.to_string(),
                origin: origin.clone(),
                other: other.to_string(),
            });
        }
    }
}
