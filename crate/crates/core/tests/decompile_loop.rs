//! The whole non-neural loop on hand-written functions: compile, print the
//! assembler, parse it back, strip the C prelude, complete it again and check
//! IO equivalence.

use declab_core::equiv::{gen_inputs, io_equivalent, EquivConfig, Stage, Verdict};
use declab_core::minic::{interpret, parse_function, pretty_print, print_function_only};
use declab_core::tokenizer::{normalize, train_unigram};
use declab_core::toyisa::{compile, emit_asm, parse_asm, run_vm, IsaId, OptLevel};
use declab_core::typeinfer::{complete_program, Completion};

const FUNCS: &[&str] = &[
    "int add(int a, int b) { return a + b * 3; }",
    "double mean(double *p, int n) { double s = 0.0; int i; for (i = 0; i < n; i = i + 1) { s = s + p[i]; } return s / 4.0; }",
    "void clamp(int *p) { int i; for (i = 0; i < 4; i = i + 1) { if (p[i] < 0) { p[i] = 0; } } }",
    "typedef int num;\nnum twice(num a) { num t = a + a; return t; }",
    "typedef double real;\nreal scale(real *q, int k) { q[0] = q[0] * 0.5 + k; return q[1]; }",
    "extern int g(int);\nint maybe(int a) { if (a > 100) { return g(a); } return a % 7; }",
    "int collatz(int a) { int n = 0; while (a > 1 && n < 50) { if (a % 2 == 0) { a = a / 2; } else { a = 3 * a + 1; } n = n + 1; } return n; }",
];

#[test]
fn compiled_code_matches_the_interpreter_everywhere() {
    let cfg = EquivConfig::default();
    for src in FUNCS {
        let ast = parse_function(src).unwrap();
        for isa in IsaId::ALL {
            for opt in OptLevel::ALL {
                let text = emit_asm(&compile(&ast, isa, opt).unwrap());
                let prog = parse_asm(&text).unwrap();
                assert_eq!(emit_asm(&prog), text);
                for input in gen_inputs(&ast.signature(), &cfg) {
                    let (want, got) = (interpret(&ast, &input, cfg.step_limit), run_vm(&prog, &input, cfg.step_limit));
                    assert!(want.equivalent(&got), "{} {isa}/{opt}: {want:?} vs {got:?}", ast.name);
                }
            }
        }
    }
}

#[test]
fn stripped_sources_complete_and_pass() {
    let with = EquivConfig::default();
    let without = EquivConfig { type_inference: false, ..with.clone() };
    for src in FUNCS {
        let ast = parse_function(src).unwrap();
        let bare = print_function_only(&ast);
        assert!(matches!(complete_program(&bare), Completion::Completed(_)), "{bare}");
        for isa in IsaId::ALL {
            for opt in OptLevel::ALL {
                let original = parse_asm(&emit_asm(&compile(&ast, isa, opt).unwrap())).unwrap();
                assert_eq!(io_equivalent(&original, &bare, &with), Verdict::Pass, "{bare}");
                let plain = io_equivalent(&original, &bare, &without);
                if ast.typedefs.is_empty() && ast.externs.is_empty() {
                    assert_eq!(plain, Verdict::Pass);
                } else {
                    assert_eq!(plain, Verdict::CompileError(Stage::Parse));
                }
            }
        }
    }
}

#[test]
fn a_wrong_hypothesis_fails() {
    let ast = parse_function(FUNCS[0]).unwrap();
    let original = parse_asm(&emit_asm(&compile(&ast, IsaId::Stk, OptLevel::O2).unwrap())).unwrap();
    let v = io_equivalent(&original, "int add(int a, int b) { return a + b * 2; }", &EquivConfig::default());
    assert!(matches!(v, Verdict::Fail { .. }), "{v:?}");
}

#[test]
fn tokenizer_round_trips_both_languages() {
    let mut corpus = Vec::new();
    for src in FUNCS {
        let ast = parse_function(src).unwrap();
        corpus.push(pretty_print(&ast));
        for isa in IsaId::ALL {
            corpus.push(emit_asm(&compile(&ast, isa, OptLevel::O0).unwrap()));
        }
    }
    let vocab = train_unigram(&corpus, 200, 10).unwrap();
    for text in &corpus {
        assert_eq!(vocab.decode(&vocab.encode(text)).unwrap(), normalize(text));
    }
}
