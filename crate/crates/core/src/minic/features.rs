use super::ast::Ast;
use super::printer::pretty_print;

/// Code features correlated against IO accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureVector {
    /// Characters of the canonical source.
    pub c_length: usize,
    pub num_func_args: usize,
    /// Pointer-typed parameters.
    pub num_pointers: usize,
    /// Characters of the assembler text.
    pub asm_length: usize,
}

pub fn extract_features(ast: &Ast, asm_text: &str) -> FeatureVector {
    FeatureVector {
        c_length: pretty_print(ast).chars().count(),
        num_func_args: ast.params.len(),
        num_pointers: ast.params.iter().filter(|p| p.ty.is_ptr()).count(),
        asm_length: asm_text.chars().count(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_function;
    use super::*;

    #[test]
    fn counts() {
        let a = parse_function("int f(int a){return a+1;}").unwrap();
        let fv = extract_features(&a, "ldi r0, #5\nret\n");
        assert_eq!(fv.num_func_args, 1);
        assert_eq!(fv.num_pointers, 0);
        // "int f(int a) {\n  return a + 1;\n}\n"
        assert_eq!(fv.c_length, "int f(int a) {\n  return a + 1;\n}\n".len());
        assert_eq!(fv.c_length, 33);
        assert_eq!(fv.asm_length, 15);

        let g = parse_function("int g(int*p,int*q,int n){return n;}").unwrap();
        let fv = extract_features(&g, "");
        assert_eq!((fv.num_func_args, fv.num_pointers), (3, 2));
    }
}
