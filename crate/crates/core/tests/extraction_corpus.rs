use serde::Deserialize;
use treevo_core::llm::extract::{extract_expression, extract_tree, ExtractError};
use treevo_core::parse;

#[derive(Deserialize)]
struct Corpus {
    case: Vec<Case>,
}

#[derive(Deserialize)]
struct Case {
    name: String,
    kind: String,
    text: String,
    expect: Option<String>,
    nodes: Option<usize>,
    error: Option<String>,
}

fn error_matches(want: &str, got: &ExtractError) -> bool {
    match want {
        "any" => true,
        "none_found" => matches!(got, ExtractError::NoTreeFound | ExtractError::NoExpressionFound),
        "invalid" => matches!(got, ExtractError::TreeInvalid { .. }),
        "parse_failed" => matches!(got, ExtractError::ParseFailed { .. }),
        other => panic!("unknown error class {other}"),
    }
}

#[test]
fn corpus() {
    let corpus: Corpus = toml::from_str(include_str!("fixtures/extraction.toml")).unwrap();
    assert_eq!(corpus.case.len(), 20);
    let mut failures = Vec::new();
    for c in &corpus.case {
        let outcome = match c.kind.as_str() {
            "tree" => extract_tree(&c.text).map(|t| {
                let nodes = t.root().size();
                (t.root().label().to_string(), Some(nodes))
            }),
            "expression" => extract_expression(&c.text).map(|e| (e.to_string(), None)),
            k => panic!("unknown kind {k}"),
        };
        let ok = match (&outcome, &c.error, &c.expect) {
            (Err(e), Some(want), _) => error_matches(want, e),
            (Ok((got, nodes)), None, Some(want)) if c.kind == "tree" => got == want && *nodes == c.nodes,
            (Ok((got, _)), None, Some(want)) => parse(got).unwrap() == parse(want).unwrap(),
            _ => false,
        };
        if !ok {
            failures.push(format!("{}: {outcome:?}", c.name));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}
