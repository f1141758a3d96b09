use std::num::{NonZeroU64, NonZeroUsize};

use proptest::prelude::*;
use reward_discovery::context::RewardContext;
use reward_discovery::rsl::{self, EvalLimits, RuntimeError};

fn leaf() -> impl Strategy<Value = Vec<String>> {
    prop_oneof![
        (0u32..1000).prop_map(|n| vec![n.to_string()]),
        (0u32..100, 1u32..100).prop_map(|(a, b)| vec![format!("{a}.{b}")]),
        prop::sample::select(vec!["a", "b", "c"]).prop_map(|f| vec!["ctx".into(), ".".into(), f.to_string()]),
    ]
}

fn tok(s: &str) -> Vec<String> {
    vec![s.to_string()]
}

fn expr() -> impl Strategy<Value = Vec<String>> {
    leaf().prop_recursive(4, 32, 3, |inner| {
        prop_oneof![
            (inner.clone(), prop::sample::select(vec!["+", "-", "*", "/"]), inner.clone()).prop_map(move |(a, op, b)| [vec!["(".to_string()], a, tok(op), b, tok(")")].concat()),
            (prop::sample::select(vec!["abs", "tanh", "sign", "floor"]), inner.clone()).prop_map(move |(f, a)| [tok(f), tok("("), a, tok(")")].concat()),
            (prop::sample::select(vec!["min", "max"]), inner.clone(), inner.clone()).prop_map(move |(f, a, b)| [tok(f), tok("("), a, tok(","), b, tok(")")].concat()),
            (inner.clone(), inner.clone(), inner).prop_map(move |(a, lo, hi)| [tok("clip"), tok("("), a, tok(","), lo, tok(","), hi, tok(")")].concat()),
        ]
    })
}

/// Statements as token lists, one per line.
fn program() -> impl Strategy<Value = Vec<Vec<String>>> {
    (prop::collection::vec(expr(), 1..4), expr()).prop_map(|(assigns, ret)| {
        let mut lines: Vec<Vec<String>> = assigns
            .into_iter()
            .enumerate()
            .map(|(i, e)| [vec![format!("v{i}"), "=".into()], e].concat())
            .collect();
        let last = format!("v{}", lines.len() - 1);
        lines.push(
            [
                vec!["return".to_string()],
                ret,
                vec!["+".into(), last.clone(), ",".into(), "{".into(), "\"last\"".into(), ":".into(), last, "}".into()],
            ]
            .concat(),
        );
        lines
    })
}

fn render(lines: &[Vec<String>], gaps: &[usize], comments: &[bool]) -> String {
    let mut out = String::new();
    let mut k = 0;
    for (n, line) in lines.iter().enumerate() {
        if comments[n % comments.len()] {
            out.push_str("# note\n\n");
        }
        for (i, t) in line.iter().enumerate() {
            if i > 0 {
                let g = gaps[k % gaps.len()];
                k += 1;
                // tokens that would merge without a separator
                let needs = t.chars().next().is_some_and(|c| c.is_alphanumeric()) && line[i - 1].chars().last().is_some_and(|c| c.is_alphanumeric());
                out.push_str(&" \t".repeat(g / 2));
                if g % 2 == 1 || needs {
                    out.push(' ');
                }
            }
            out.push_str(t);
        }
        if comments[(n + 1) % comments.len()] {
            out.push_str("   # trailing");
        }
        out.push('\n');
    }
    out
}

fn ctx(a: f64, b: f64, c: f64) -> RewardContext {
    let mut ctx = RewardContext::new();
    ctx.set("a", a);
    ctx.set("b", b);
    ctx.set("c", c);
    ctx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn parse_never_panics(src in "\\PC{0,200}") {
        let _ = rsl::parse(&src);
    }

    #[test]
    fn parse_never_panics_on_token_soup(
        toks in prop::collection::vec(prop::sample::select(vec![
            "x", "=", "(", ")", "[", "]", "{", "}", ",", ":", "return", "if", "elif", "else", "for", "in", "range",
            "ctx", ".", "1", "2.5", "1e400", "+", "-", "*", "/", "**", "and", "not", "<", "==", "\n", "#", "\"k\"",
        ]), 0..60)
    ) {
        let _ = rsl::parse(&toks.join(" "));
    }

    #[test]
    fn evaluation_is_deterministic(lines in program(), a in -1e3..1e3f64, b in -1e3..1e3f64, c in -1e3..1e3f64) {
        let p = rsl::parse(&render(&lines, &[1], &[false])).unwrap();
        let ctx = ctx(a, b, c);
        let first = p.evaluate(&ctx, EvalLimits::default());
        for _ in 0..3 {
            prop_assert_eq!(&p.evaluate(&ctx, EvalLimits::default()), &first);
        }
        if let Ok(out) = first {
            prop_assert!(out.total.is_finite());
            prop_assert!(out.components.values().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn hash_ignores_layout_and_comments(
        lines in program(),
        gaps in prop::collection::vec(0usize..5, 1..8),
        comments in prop::collection::vec(any::<bool>(), 1..5),
    ) {
        let plain = rsl::parse(&render(&lines, &[1], &[false])).unwrap();
        let noisy = rsl::parse(&render(&lines, &gaps, &comments)).unwrap();
        prop_assert_eq!(rsl::canonical_hash(&plain), rsl::canonical_hash(&noisy));
        prop_assert_eq!(plain.referenced_fields(), noisy.referenced_fields());
    }

    #[test]
    fn hash_separates_different_constants(lines in program(), k in 0u32..1000) {
        let base = render(&lines, &[1], &[false]);
        let a = rsl::parse(&format!("k = {k}\n{base}")).unwrap();
        let b = rsl::parse(&format!("k = {}\n{base}", k + 1)).unwrap();
        prop_assert_ne!(rsl::canonical_hash(&a), rsl::canonical_hash(&b));
    }
}

#[test]
fn hostile_loops_stop_at_the_step_budget() {
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/rsl/hostile_triple_loop.rsl")).unwrap();
    let p = rsl::parse(&src).unwrap();
    let limits = EvalLimits::new(NonZeroU64::new(50_000).unwrap(), NonZeroUsize::new(1000).unwrap());
    let started = std::time::Instant::now();
    assert_eq!(p.evaluate(&RewardContext::new(), limits), Err(RuntimeError::StepBudgetExceeded { limit: 50_000 }));
    assert_eq!(
        p.evaluate(&RewardContext::new(), EvalLimits::default()),
        Err(RuntimeError::StepBudgetExceeded { limit: 1_000_000 })
    );
    assert!(started.elapsed().as_secs() < 10);
}
