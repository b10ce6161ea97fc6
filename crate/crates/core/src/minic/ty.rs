use std::fmt;

/// Mini-C types. `Void` only ever appears as a function return type.
#[derive(Debug, Clone, PartialEq)]
pub enum Ty {
    /// 32-bit two's-complement integer.
    Int,
    /// 64-bit IEEE float, spelled `double` in source.
    Float,
    Void,
    Ptr(Box<Ty>),
    Func(Vec<Ty>, Box<Ty>),
    /// A typedef name together with the type it was declared as.
    Alias(String, Box<Ty>),
}

impl Ty {
    pub fn ptr(elem: Ty) -> Ty {
        Ty::Ptr(Box::new(elem))
    }

    /// Strips aliases, including aliases nested under pointers and function types.
    pub fn resolve(&self) -> Ty {
        match self {
            Ty::Alias(_, t) => t.resolve(),
            Ty::Ptr(t) => Ty::Ptr(Box::new(t.resolve())),
            Ty::Func(ps, r) => Ty::Func(ps.iter().map(Ty::resolve).collect(), Box::new(r.resolve())),
            t => t.clone(),
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.resolve(), Ty::Int | Ty::Float)
    }

    pub fn is_ptr(&self) -> bool {
        matches!(self.resolve(), Ty::Ptr(_))
    }

    pub fn is_void(&self) -> bool {
        matches!(self.resolve(), Ty::Void)
    }

    /// Element type of a pointer, resolved.
    pub fn elem(&self) -> Option<Ty> {
        match self.resolve() {
            Ty::Ptr(t) => Some(*t),
            _ => None,
        }
    }

    /// Canonical spelling used in declarations and casts.
    pub fn c_name(&self) -> String {
        match self {
            Ty::Int => "int".into(),
            Ty::Float => "double".into(),
            Ty::Void => "void".into(),
            Ty::Ptr(t) => format!("{} *", t.c_name()),
            Ty::Alias(n, _) => n.clone(),
            Ty::Func(ps, r) => {
                let ps: Vec<String> = ps.iter().map(Ty::c_name).collect();
                format!("{} (*)({})", r.c_name(), ps.join(", "))
            }
        }
    }

    /// Renders a declarator `T name`, attaching the star to the name.
    pub fn declare(&self, name: &str) -> String {
        match self {
            Ty::Ptr(t) => format!("{} *{}", t.c_name(), name),
            t => format!("{} {}", t.c_name(), name),
        }
    }
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.c_name())
    }
}

/// The externally visible shape of a function: what the calling convention
/// and the IO harness need to know.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub name: String,
    /// Resolved parameter types.
    pub params: Vec<Ty>,
    /// Resolved return type.
    pub ret: Ty,
}

impl Signature {
    pub fn scalar_params(&self) -> impl Iterator<Item = &Ty> {
        self.params.iter().filter(|t| !t.is_ptr())
    }

    pub fn pointer_params(&self) -> impl Iterator<Item = &Ty> {
        self.params.iter().filter(|t| t.is_ptr())
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ps: Vec<String> = self.params.iter().map(Ty::c_name).collect();
        write!(f, "{} {}({})", self.ret.c_name(), self.name, ps.join(", "))
    }
}
