//! Canonical source form. See `docs/canonical-form.md`.

use std::fmt::Write;

use super::ast::*;
use super::ty::Ty;

const INDENT: &str = "  ";

/// Prints typedefs, externs and the function in canonical form.
pub fn pretty_print(ast: &Ast) -> String {
    let mut out = String::new();
    for t in &ast.typedefs {
        let _ = writeln!(out, "typedef {};", t.ty.declare(&t.name));
    }
    for e in &ast.externs {
        let _ = writeln!(out, "extern {};", fn_decl(&e.ret, &e.name, &e.params));
    }
    out.push_str(&print_function_only(ast));
    out
}

/// Prints only the function definition, without the declarations it uses.
pub fn print_function_only(ast: &Ast) -> String {
    let mut out = String::new();
    let params: Vec<String> = ast.params.iter().map(|p| p.ty.declare(&p.name)).collect();
    let _ = writeln!(out, "{} {}({}) {{", ast.ret.c_name(), ast.name, params.join(", "));
    print_block(&mut out, &ast.body, 1);
    out.push_str("}\n");
    out
}

fn fn_decl(ret: &Ty, name: &str, params: &[Ty]) -> String {
    let ps: Vec<String> = params.iter().map(Ty::c_name).collect();
    format!("{} {}({})", ret.c_name(), name, ps.join(", "))
}

fn print_block(out: &mut String, stmts: &[Stmt], depth: usize) {
    for s in stmts {
        print_stmt(out, s, depth);
    }
}

fn simple_stmt(s: &Stmt) -> String {
    match s {
        Stmt::Decl { name, ty, init: Some(e) } => format!("{} = {}", ty.declare(name), print_expr(e)),
        Stmt::Decl { name, ty, init: None } => ty.declare(name),
        Stmt::Assign { target, value } => format!("{} = {}", print_expr(target), print_expr(value)),
        Stmt::Return(Some(e)) => format!("return {}", print_expr(e)),
        Stmt::Return(None) => "return".into(),
        Stmt::Expr(e) => print_expr(e),
        _ => unreachable!("compound statement in simple position"),
    }
}

fn print_stmt(out: &mut String, s: &Stmt, depth: usize) {
    let pad = INDENT.repeat(depth);
    match s {
        Stmt::If { cond, then, els } => {
            let _ = writeln!(out, "{pad}if ({}) {{", print_expr(cond));
            print_block(out, then, depth + 1);
            let mut els = els.as_deref();
            loop {
                match els {
                    None => {
                        let _ = writeln!(out, "{pad}}}");
                        break;
                    }
                    Some([Stmt::If { cond, then, els: inner }]) => {
                        let _ = writeln!(out, "{pad}}} else if ({}) {{", print_expr(cond));
                        print_block(out, then, depth + 1);
                        els = inner.as_deref();
                    }
                    Some(block) => {
                        let _ = writeln!(out, "{pad}}} else {{");
                        print_block(out, block, depth + 1);
                        let _ = writeln!(out, "{pad}}}");
                        break;
                    }
                }
            }
        }
        Stmt::While { cond, body } => {
            let _ = writeln!(out, "{pad}while ({}) {{", print_expr(cond));
            print_block(out, body, depth + 1);
            let _ = writeln!(out, "{pad}}}");
        }
        Stmt::For { init, cond, step, body } => {
            let init = init.as_deref().map(simple_stmt).unwrap_or_default();
            let cond = cond.as_ref().map(|c| format!(" {}", print_expr(c))).unwrap_or_default();
            let step = step.as_deref().map(|s| format!(" {}", simple_stmt(s))).unwrap_or_default();
            let _ = writeln!(out, "{pad}for ({init};{cond};{step}) {{");
            print_block(out, body, depth + 1);
            let _ = writeln!(out, "{pad}}}");
        }
        s => {
            let _ = writeln!(out, "{pad}{};", simple_stmt(s));
        }
    }
}

const UNARY_PREC: u8 = 7;
const POSTFIX_PREC: u8 = 8;

fn prec(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Binary(op, ..) => op.precedence(),
        ExprKind::Unary(..) | ExprKind::Deref(_) | ExprKind::AddrOf(_) | ExprKind::Cast(..) => UNARY_PREC,
        ExprKind::Index(..) | ExprKind::Call(..) => POSTFIX_PREC,
        _ => POSTFIX_PREC + 1,
    }
}

fn wrap(e: &Expr, min: u8) -> String {
    let s = print_expr(e);
    if prec(e) < min {
        format!("({s})")
    } else {
        s
    }
}

pub fn print_float(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'N', 'i']) {
        s
    } else {
        format!("{s}.0")
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

/// Prints an expression with the minimum parentheses needed to reparse to
/// the same tree.
pub fn print_expr(e: &Expr) -> String {
    match &e.kind {
        ExprKind::IntLit(v) => v.to_string(),
        ExprKind::FloatLit(v) => print_float(*v),
        ExprKind::StrLit(s) => format!("\"{}\"", escape(s)),
        ExprKind::Var(n) => n.clone(),
        ExprKind::Unary(op, inner) => {
            let sym = match op {
                UnOp::Neg => "-",
                UnOp::Not => "!",
            };
            let needs_paren = matches!(inner.kind, ExprKind::Unary(UnOp::Neg, _)) && *op == UnOp::Neg;
            if needs_paren {
                format!("{sym}({})", print_expr(inner))
            } else {
                format!("{sym}{}", wrap(inner, UNARY_PREC))
            }
        }
        ExprKind::Binary(op, a, b) => {
            let p = op.precedence();
            // left-associative: the right operand needs parens at equal precedence
            format!("{} {} {}", wrap(a, p), op.symbol(), wrap(b, p + 1))
        }
        ExprKind::Index(a, i) => format!("{}[{}]", wrap(a, POSTFIX_PREC), print_expr(i)),
        ExprKind::Deref(inner) => format!("*{}", wrap(inner, UNARY_PREC)),
        ExprKind::AddrOf(n) => format!("&{n}"),
        ExprKind::Cast(t, inner) => format!("({}){}", t.c_name(), wrap(inner, UNARY_PREC)),
        ExprKind::Call(n, args) => {
            let a: Vec<String> = args.iter().map(print_expr).collect();
            format!("{n}({})", a.join(", "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_function;
    use super::*;

    fn canon(src: &str) -> String {
        pretty_print(&parse_function(src).unwrap())
    }

    #[test]
    fn canonical_snapshot() {
        assert_eq!(canon("int f(int a){return a+1;}"), "int f(int a) {\n  return a + 1;\n}\n");
    }

    #[test]
    fn full_snapshot() {
        let src = "typedef double real;\nextern int g(int*,double);\n\
                   real f(int *p,int n){real s=0.5;int i;for(i=0;i<n;i=i+1){if(p[i]>0){s=s+p[i];}else if(p[i]<0){s=s-1;}else{g(p,s);}}\
                   while(!(n<0)){n=n-(1-2)*3;} return -(-s)/(double)(n%3);}";
        let expected = "typedef double real;\n\
extern int g(int *, double);\n\
real f(int *p, int n) {\n  real s = 0.5;\n  int i;\n  for (i = 0; i < n; i = i + 1) {\n    if (p[i] > 0) {\n      s = s + p[i];\n    } else if (p[i] < 0) {\n      s = s - 1;\n    } else {\n      g(p, s);\n    }\n  }\n  while (!(n < 0)) {\n    n = n - (1 - 2) * 3;\n  }\n  return -(-s) / (double)(n % 3);\n}\n";
        assert_eq!(canon(src), expected);
    }

    #[test]
    fn idempotent() {
        let once = canon("int f(int*p){p[0]=p[0]*2; return p[0];}");
        assert_eq!(canon(&once), once);
    }

    #[test]
    fn string_literal_is_byte_exact() {
        let out = canon("extern void log(int*);\nvoid f(){log(\"a  b\");}");
        assert!(out.contains("log(\"a  b\");"), "{out}");
    }

    #[test]
    fn associativity_parens() {
        assert_eq!(canon("int f(int a,int b,int c){return a-(b-c);}").lines().nth(1), Some("  return a - (b - c);"));
        assert_eq!(canon("int f(int a,int b,int c){return (a-b)-c;}").lines().nth(1), Some("  return a - b - c;"));
    }

    #[test]
    fn float_literals_round_trip() {
        for v in [0.5, 1.0, 1e21, 1.25e-7, 123456.789] {
            let s = print_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            assert!(s.contains('.') || s.contains('e'));
        }
    }
}
