//! Completion of partial programs: infers the typedefs and extern
//! declarations a decompiled function needs in order to compile.

mod parse;
mod solve;

pub use parse::{parse_partial, AmbiguousAst, Lattice, PExpr, PExtern, PStmt, PTy, UnknownKind};
pub use solve::{generate_constraints, solve, Branch, Choice, Constraint, ConstraintSet, Substitution, Term, VarOrigin};

use thiserror::Error;

use crate::minic::{parse_function, FrontendError, Ty};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypeInferError {
    #[error("{0}")]
    Parse(FrontendError),
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("type conflict: `{0}` vs `{1}`")]
    TypeConflict(String, String),
    #[error("occurs check: `{0}` appears in `{1}`")]
    OccursCheck(String, String),
    #[error("undeclared identifier `{0}`")]
    Undeclared(String),
    #[error("cannot declare `{0}`: {1}")]
    Conflict(String, String),
    /// The completed program was still rejected by the front end.
    #[error("completed program rejected: {0}")]
    Rejected(FrontendError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Completion {
    Completed(String),
    Unfixable(TypeInferError),
}

fn scalar_or_ptr(t: &Ty) -> bool {
    match t {
        Ty::Int | Ty::Float => true,
        Ty::Ptr(e) => matches!(**e, Ty::Int | Ty::Float),
        _ => false,
    }
}

/// Declarations for the undeclared names, in order of first use:
/// `typedef <type> <name>;` and `extern <ret> <name>(<params>);`.
pub fn synthesize_prelude(sub: &Substitution, ast: &AmbiguousAst) -> Result<String, TypeInferError> {
    let declared = ast.declared_names();
    let mut out = String::new();
    for (name, kind) in &ast.unknowns {
        let conflict = |why: &str| TypeInferError::Conflict(name.clone(), why.to_string());
        if declared.contains(name) {
            return Err(conflict("name already declared"));
        }
        match kind {
            UnknownKind::Type => {
                let Some(t) = sub.types.get(name) else { continue };
                if !scalar_or_ptr(t) {
                    return Err(conflict(&format!("`{t}` is not a declarable type")));
                }
                out.push_str(&format!("typedef {};\n", t.declare(name)));
            }
            UnknownKind::Function => {
                let Some(Ty::Func(ps, r)) = sub.functions.get(name) else { continue };
                if !(scalar_or_ptr(r) || **r == Ty::Void) || !ps.iter().all(scalar_or_ptr) {
                    return Err(conflict("unsupported signature"));
                }
                if sub.types.contains_key(name) {
                    return Err(conflict("used both as a type and as a function"));
                }
                let ps: Vec<String> = ps.iter().map(Ty::c_name).collect();
                out.push_str(&format!("extern {} {}({});\n", r.c_name(), name, ps.join(", ")));
            }
        }
    }
    Ok(out)
}

/// Parses, infers and prepends the missing declarations. The result is
/// always accepted by the mini-C front end; otherwise the error is returned.
pub fn complete_program(hypothesis: &str) -> Completion {
    match try_complete(hypothesis) {
        Ok(s) => Completion::Completed(s),
        Err(e) => Completion::Unfixable(e),
    }
}

fn try_complete(hypothesis: &str) -> Result<String, TypeInferError> {
    let ast = parse_partial(hypothesis)?;
    let source = if ast.unknowns.is_empty() {
        hypothesis.to_string()
    } else {
        let cs = generate_constraints(&ast);
        let sub = solve(&cs)?;
        synthesize_prelude(&sub, &ast)? + hypothesis
    };
    parse_function(&source).map_err(TypeInferError::Rejected)?;
    Ok(source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minic::pretty_print;

    fn completed(src: &str) -> String {
        match complete_program(src) {
            Completion::Completed(s) => s,
            Completion::Unfixable(e) => panic!("{src}: {e}"),
        }
    }

    #[test]
    fn typed_program_passes_through() {
        let src = "int f(int a) { return a + 1; }";
        assert_eq!(completed(src), src);
    }

    #[test]
    fn infers_typedef() {
        let out = completed("mytype f(mytype x){return x+1;}");
        assert_eq!(out, "typedef int mytype;\nmytype f(mytype x){return x+1;}");
    }

    #[test]
    fn extern_rendering() {
        let out = completed("int f(double x){ return g(x); }");
        assert!(out.starts_with("extern int g(double);\n"), "{out}");
    }

    #[test]
    fn conflict_is_unfixable() {
        let r = complete_program("int f(int *p){ int x = 0; x = p; return x; }");
        assert!(matches!(r, Completion::Unfixable(TypeInferError::Rejected(_))), "{r:?}");
        let r = complete_program("int f(t p){ int x = p[0]; t y = 1; return x; }");
        assert!(matches!(r, Completion::Unfixable(TypeInferError::TypeConflict(..))), "{r:?}");
    }

    #[test]
    fn collision_with_existing_typedef() {
        let r = complete_program("typedef int t;\nint f(int x){ return t(x); }");
        assert!(matches!(r, Completion::Unfixable(TypeInferError::Conflict(..))), "{r:?}");
    }

    #[test]
    fn idempotent() {
        for src in [
            "real f(real a, word *p){ p[1] = 2; return a * 2.5 + h(p); }",
            "int f(int b){ return (t)-b; }",
            "void f(int *p){ emit(p[0], 1.5); }",
        ] {
            let once = completed(src);
            assert_eq!(completed(&once), once, "{src}");
        }
    }

    #[test]
    fn float_typedef_from_literal() {
        let out = completed("real f(real a){ return a * 2.5; }");
        assert!(out.starts_with("typedef double real;\n"), "{out}");
    }

    #[test]
    fn pointer_typedef() {
        let out = completed("int f(buf p){ return p[0]; }");
        assert!(out.starts_with("typedef int *buf;\n"), "{out}");
    }

    #[test]
    fn stripped_prelude_round_trip() {
        let src = "typedef double real;\nextern int g(int, double *);\nreal f(int a, double *p) { real x = p[0]; g(a, p); return x + 1.0; }";
        let ast = parse_function(src).unwrap();
        let stripped = pretty_print(&ast.without_prelude());
        let out = completed(&stripped);
        let back = parse_function(&out).unwrap();
        assert_eq!(back.signature(), ast.signature());
        assert_eq!(back.externs, ast.externs);
    }

    #[test]
    fn undeclared_variable_is_unfixable() {
        let r = complete_program("int f(){ return y + g(1); }");
        assert!(matches!(r, Completion::Unfixable(TypeInferError::Undeclared(ref n)) if n == "y"), "{r:?}");
    }
}
