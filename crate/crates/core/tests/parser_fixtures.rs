mod common;

use common::*;
use psi_core::model::{normalize_input, parse_instances_file, serialize_dataset, DatasetLabel};

#[test]
fn fixture_corpus_is_large_and_covers_both_roles() {
    let cases = parser_cases();
    assert!(cases.len() >= 20);
    for kind in ["generator", "reflector"] {
        let of_kind: Vec<_> = cases.iter().filter(|c| c["kind"] == kind).collect();
        assert!(of_kind.iter().any(|c| c["expect"]["error"] == true), "{kind} lacks failure cases");
        assert!(of_kind.iter().any(|c| c["expect"]["error"].is_null()), "{kind} lacks success cases");
    }
}

#[test]
fn every_fixture_parses_or_fails_as_expected() {
    let failures: Vec<String> = parser_cases()
        .iter()
        .filter_map(|c| check_parser_case(c).err())
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn parse_serialize_parse_is_normalization() {
    for (name, bytes) in dataset_fixtures() {
        let first = parse_instances_file(&bytes, DatasetLabel::Seed).unwrap();
        let again = parse_instances_file(&serialize_dataset(&first), DatasetLabel::Seed).unwrap();
        assert_eq!(first.items, again.items, "{name}");
        for item in &first.items {
            assert_eq!(item.input, normalize_input(&item.input), "{name}");
            assert_eq!(item.instruction, item.instruction.trim(), "{name}");
        }
    }
}
