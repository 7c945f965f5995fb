use proptest::prelude::*;
use tplad::eval::grouping_accuracy;
use tplad::parser::{tokenize, ParserConfig, RawLog, Token, TemplateMiner};

const WORDS: &[&str] = &["open", "close", "file", "user", "from", "to", "port", "ok", "fail", "session"];

fn token() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => prop::sample::select(WORDS).prop_map(str::to_string),
        1 => (0u32..500).prop_map(|n| n.to_string()),
        1 => (0u8..255, 0u8..255).prop_map(|(a, b)| format!("10.0.{a}.{b}")),
    ]
}

fn lines() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::collection::vec(token(), 1..7).prop_map(|t| t.join(" ")), 1..60)
}

fn mine(lines: &[String]) -> (TemplateMiner, Vec<(usize, Vec<String>)>) {
    let mut m = TemplateMiner::new(ParserConfig::default());
    let out = lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let p = m.parse_line(&RawLog::new(i as u64 + 1, l.as_str())).unwrap();
            (p.template_id, p.params)
        })
        .collect();
    (m, out)
}

proptest! {
    #[test]
    fn parsing_is_deterministic(lines in lines()) {
        prop_assert_eq!(mine(&lines).1, mine(&lines).1);
    }

    #[test]
    fn reparse_is_idempotent(lines in lines()) {
        let (mut m, _) = mine(&lines);
        let before: Vec<Vec<Token>> = m.templates().iter().map(|t| t.tokens.clone()).collect();
        for (i, l) in lines.iter().enumerate() {
            m.parse_line(&RawLog::new(i as u64 + 1, l.as_str())).unwrap();
        }
        let after: Vec<Vec<Token>> = m.templates().iter().map(|t| t.tokens.clone()).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn tokens_are_conserved_and_aligned(lines in lines()) {
        let mut m = TemplateMiner::new(ParserConfig::default());
        for (i, l) in lines.iter().enumerate() {
            let p = m.parse_line(&RawLog::new(i as u64 + 1, l.as_str())).unwrap();
            let t = m.template(p.template_id).unwrap();
            prop_assert_eq!(p.params.len(), t.placeholder_count());
            let rebuilt = t.reconstruct(&p.params);
            let original: Vec<String> = tokenize(l).unwrap().into_iter().map(str::to_string).collect();
            prop_assert_eq!(rebuilt, original);
        }
    }
}

#[test]
fn reference_example_line() {
    let mut m = TemplateMiner::new(ParserConfig::default());
    let a = m.parse_line(&RawLog::new(1, "connect src 192.168.1.1 dst 192.168.1.2 port 79")).unwrap();
    let b = m.parse_line(&RawLog::new(2, "connect src 10.0.0.5 dst 10.0.0.6 port 80")).unwrap();
    assert_eq!(a.template_id, b.template_id);
    assert_eq!(m.template(a.template_id).unwrap().to_string(), "connect src <*> dst <*> port <*>");
    let again = m.match_line(&RawLog::new(3, "connect src 192.168.1.1 dst 192.168.1.2 port 79")).unwrap().unwrap();
    assert_eq!(again.params, ["192.168.1.1", "192.168.1.2", "79"]);
}

/// Ten formats, ten lines each, labeled by format.
pub fn format_fixture() -> (Vec<String>, Vec<String>) {
    let text = include_str!("../fixtures/parser_formats.tsv");
    text.lines()
        .map(|l| {
            let (label, line) = l.split_once('\t').unwrap();
            (label.to_string(), line.to_string())
        })
        .unzip()
}

#[test]
fn grouping_accuracy_on_ten_formats() {
    let (labels, lines) = format_fixture();
    assert_eq!(lines.len(), 100);
    let (_, parsed) = mine(&lines);
    let ids: Vec<usize> = parsed.iter().map(|p| p.0).collect();
    let acc = grouping_accuracy(&ids, &labels);
    assert!(acc >= 0.95, "grouping accuracy {acc}");
}
